"""Run scenarios to disk and compare the resulting reports."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import errors
from .sim.harness import run_scenario
from .sim.models import CONDITIONS, ScenarioSpec, TrialTrace
from .sim.summary import summarize
from .trace import write_jsonl

REPORT_SCHEMA_VERSION = 1
REPORT_NAME = "report.json"

EXIT_OK = 0
EXIT_CONSERVATION = 2
EXIT_CONFIG = 3

log = logging.getLogger(__name__)


def trace_filename(trace: TrialTrace) -> str:
    prefix = f"{trace.mode.lower()}_" if trace.mode else ""
    return f"{prefix}trial_{trace.trial:04d}.jsonl"


@dataclass
class RunReport:
    scenario: str
    family: str
    pattern: str
    condition: str
    seed: int
    trials: int
    summary: dict[str, Any]
    conservation: dict[str, Any]
    exit_code: int
    rows: list[dict[str, Any]] = field(default_factory=list)
    modes: tuple[str, ...] = ()

    @property
    def disposition(self) -> str:
        return "conservation_violation" if self.exit_code == EXIT_CONSERVATION else "completed"

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "scenario": self.scenario,
            "family": self.family,
            "pattern": self.pattern,
            "condition": self.condition,
            "seed": self.seed,
            "modes": list(self.modes),
            "trials": self.trials,
            "summary": self.summary,
            "conservation": self.conservation,
            "exit_code": self.exit_code,
            "disposition": self.disposition,
            "rows": self.rows,
        }


def _row(trace: TrialTrace, filename: str) -> dict[str, Any]:
    return {
        "file": filename,
        "trial": trace.trial,
        "mode": trace.mode,
        "task": trace.task_id,
        "outcome": trace.primary_outcome,
        "success": trace.success,
        "tokens": trace.tokens,
        "llm_calls": trace.llm_calls,
        "iterations": trace.iterations_used,
        "disposition": trace.disposition,
    }


def run(
    spec: ScenarioSpec,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    trials: int | None = None,
    condition: str | None = None,
) -> RunReport:
    """Execute a scenario; write one JSONL per trial plus ``report.json``.

    Conservation findings do not abort the run. They are logged in full and
    turn the exit code to 2.
    """
    overrides: dict[str, Any] = {}
    if seed is not None:
        overrides["seed"] = seed
    if trials is not None:
        overrides["trials"] = trials
    if condition is not None:
        cond = condition.upper()
        if cond not in CONDITIONS:
            raise errors.ValidationError("condition", f"must be one of {[c.lower() for c in CONDITIONS]}")
        overrides["condition"] = cond
    try:
        spec = replace(spec, **overrides)
    except ValueError as exc:
        raise errors.ValidationError("trials", str(exc)) from None

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            if not os.access(out, os.W_OK):
                raise PermissionError(f"{out} is not writable")
        except OSError as exc:
            raise errors.IoError(f"cannot write to {out}: {exc}") from exc

    traces = run_scenario(spec)
    rows, details = [], []
    for tr in traces:
        name = trace_filename(tr)
        if out is not None:
            try:
                write_jsonl(tr.events, out / name)
            except OSError as exc:
                raise errors.IoError(f"cannot write {out / name}: {exc}") from exc
        rows.append(_row(tr, name))
        if tr.conservation:
            details.append({"file": name, "trial": tr.trial, "mode": tr.mode, "findings": tr.conservation})

    checked = [t for t in traces if t.conservation is not None]
    n_violations = sum(len(t.conservation or ()) for t in checked)
    report = RunReport(
        scenario=spec.name,
        family=spec.family or spec.name,
        pattern=spec.pattern,
        condition=spec.condition,
        seed=spec.seed,
        trials=len(traces),
        summary=summarize(traces),
        conservation={
            "checked": len(checked),
            "ok": sum(1 for t in checked if not t.conservation),
            "violations": n_violations,
            "details": details,
        },
        exit_code=EXIT_CONSERVATION if n_violations else EXIT_OK,
        rows=rows,
        modes=spec.modes,
    )
    if n_violations:
        log.warning("%s: %d conservation finding(s) across %d trial(s)", spec.name, n_violations, len(details))
    if out is not None:
        write_report(report, out / REPORT_NAME)
    return report


def write_report(report: RunReport, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as exc:
        raise errors.IoError(f"cannot write {path}: {exc}") from exc


def load_report(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_NAME
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise errors.IoError(f"cannot read report {p}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise errors.ParseError(f"{p}: {exc}") from exc
    if not isinstance(data, dict) or data.get("schema_version") != REPORT_SCHEMA_VERSION or "summary" not in data:
        raise errors.ParseError(f"{p}: not a version {REPORT_SCHEMA_VERSION} run report")
    return data


# -- comparison --------------------------------------------------------------


def _human(x: float) -> str:
    """Three significant figures with a K/M/B suffix, e.g. 5.29B, 10.1M."""
    for div, suffix in ((1e9, "B"), (1e6, "M"), (1e3, "K")):
        if abs(x) >= div:
            v = x / div
            return f"{v:.3g}{suffix}" if v < 1000 else f"{v:.0f}{suffix}"
    return f"{x:.3g}"


def _pct_change(a: float, b: float) -> str:
    if b == 0:
        return "n/a" if a == 0 else "inf"
    v = (a / b - 1.0) * 100.0
    # avoid "-0.0%"
    return f"{v + 0.0:+.1f}%" if round(v, 1) != 0 else "0.0%"


@dataclass(frozen=True)
class Comparison:
    label_a: str
    label_b: str
    tokens_a: float
    tokens_b: float
    variance_a: float | None
    variance_b: float | None
    iterations_a: float
    iterations_b: float
    llm_calls_a: float
    llm_calls_b: float
    success_a: float
    success_b: float

    @property
    def token_reduction(self) -> float:
        """1 - mean_a / mean_b."""
        if self.tokens_b == 0:
            return 0.0 if self.tokens_a == 0 else -math.inf
        return 1.0 - self.tokens_a / self.tokens_b

    @property
    def variance_ratio(self) -> float | None:
        """var_b / var_a; inf when var_a is 0; None when either is undefined."""
        if self.variance_a is None or self.variance_b is None:
            return None
        if self.variance_a == 0:
            return 1.0 if self.variance_b == 0 else math.inf
        return self.variance_b / self.variance_a

    @property
    def success_delta_pp(self) -> float:
        return (self.success_a - self.success_b) * 100.0

    def ratio_text(self) -> str:
        r = self.variance_ratio
        if r is None:
            return "n/a"
        if math.isinf(r):
            return "inf"
        return f"{r:.1f}x"

    def render(self) -> str:
        def var(v: float | None) -> str:
            return "n/a" if v is None else _human(v)

        red = self.token_reduction
        token_change = "inf" if math.isinf(red) else (f"{-red * 100 + 0.0:+.1f}%" if round(red * 100, 1) != 0 else "0.0%")
        delta = self.success_delta_pp
        rows = [
            ("Metric", self.label_b, self.label_a, "Change"),
            ("Token Usage", f"{self.tokens_b:,.0f}", f"{self.tokens_a:,.0f}", token_change),
            ("Variance", var(self.variance_b), var(self.variance_a), self.ratio_text()),
            ("Iterations", f"{self.iterations_b:.2f}", f"{self.iterations_a:.2f}",
             _pct_change(self.iterations_a, self.iterations_b)),
            ("LLM Calls", f"{self.llm_calls_b:.1f}", f"{self.llm_calls_a:.1f}",
             _pct_change(self.llm_calls_a, self.llm_calls_b)),
            ("Success Rate", f"{self.success_b * 100:.1f}%", f"{self.success_a * 100:.1f}%",
             f"{delta + 0.0:+.1f}pp" if round(delta, 1) != 0 else "0.0pp"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = []
        for j, r in enumerate(rows):
            cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
            if j == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _single_group(report: dict[str, Any], path: str) -> tuple[str, dict[str, Any]]:
    groups = report["summary"]
    if len(groups) != 1:
        raise errors.Mismatch(f"{path}: report has {len(groups)} summary groups; compare needs exactly one")
    return next(iter(groups.items()))


def compare_reports(report_a: dict[str, Any], report_b: dict[str, Any], names: tuple[str, str] = ("a", "b")) -> Comparison:
    if report_a.get("family") != report_b.get("family"):
        raise errors.Mismatch(f"scenario families differ: {report_a.get('family')!r} vs {report_b.get('family')!r}")
    label_a, ga = _single_group(report_a, names[0])
    label_b, gb = _single_group(report_b, names[1])
    return Comparison(
        label_a=label_a,
        label_b=label_b,
        tokens_a=ga["tokens_mean"],
        tokens_b=gb["tokens_mean"],
        variance_a=ga["tokens_variance"],
        variance_b=gb["tokens_variance"],
        iterations_a=ga["iterations_mean"],
        iterations_b=gb["iterations_mean"],
        llm_calls_a=ga["llm_calls_mean"],
        llm_calls_b=gb["llm_calls_mean"],
        success_a=ga["success_rate"],
        success_b=gb["success_rate"],
    )


def compare(report_a: str | Path, report_b: str | Path) -> str:
    """Comparison table: reduction = 1 - mean_a/mean_b, variance ratio = var_b/var_a."""
    a, b = load_report(report_a), load_report(report_b)
    return compare_reports(a, b, (str(report_a), str(report_b))).render()
