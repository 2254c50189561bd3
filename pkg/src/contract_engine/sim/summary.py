"""Aggregate statistics over trial traces."""

from __future__ import annotations

import statistics
from collections import Counter
from typing import Any, Sequence

from ..errors import EmptyTraces
from .models import TrialTrace

OUTCOMES = ("FULFILLED", "VIOLATED", "EXPIRED", "TERMINATED")


def _mean_var(xs: Sequence[float]) -> tuple[float, float | None]:
    mean = statistics.fmean(xs)
    # unbiased; undefined for a single sample
    var = statistics.variance(xs) if len(xs) > 1 else None
    return mean, var


def summarize_group(traces: Sequence[TrialTrace]) -> dict[str, Any]:
    if not traces:
        raise EmptyTraces("no traces to summarize")
    tokens = [t.tokens for t in traces]
    mean, var = _mean_var(tokens)
    outcomes = Counter(t.primary_outcome for t in traces)
    n = len(traces)
    checked = [t for t in traces if t.conservation is not None]
    violations = sum(len(t.conservation or ()) for t in checked)
    return {
        "condition": traces[0].condition,
        "mode": traces[0].mode,
        "trials": n,
        "tokens_mean": mean,
        "tokens_variance": var,
        "success_rate": sum(t.success for t in traces) / n,
        "iterations_mean": statistics.fmean(t.iterations_used for t in traces),
        "llm_calls_mean": statistics.fmean(t.llm_calls for t in traces),
        "reasoning_tokens_mean": statistics.fmean(t.reasoning_tokens for t in traces),
        "outcomes": {k: outcomes.get(k, 0) for k in OUTCOMES},
        "violation_count": outcomes.get("VIOLATED", 0),
        "expiry_count": outcomes.get("EXPIRED", 0),
        "timeout_rate": outcomes.get("EXPIRED", 0) / n,
        "conservation": {
            "checked": len(checked),
            "ok": sum(1 for t in checked if not t.conservation),
            "violations": violations,
        },
    }


def summarize(traces: Sequence[TrialTrace]) -> dict[str, dict[str, Any]]:
    """Summary per (condition, mode) group, keyed ``CONDITION`` or ``CONDITION:MODE``."""
    if not traces:
        raise EmptyTraces("no traces to summarize")
    groups: dict[str, list[TrialTrace]] = {}
    for t in traces:
        key = t.condition if t.mode is None else f"{t.condition}:{t.mode}"
        groups.setdefault(key, []).append(t)
    return {k: summarize_group(v) for k, v in groups.items()}
