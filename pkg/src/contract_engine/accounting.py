"""Per-contract consumption ledger, utilization monitor, and threshold alerts.

Consumption is recorded per completed call. A call's usage is only known once
it returns, so a recording is applied whole even when it pushes a dimension
past its budget; the overshoot is flagged and the contract's guards then stop
any further recording.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from . import errors
from .contract import Contract, State, violated_dimensions
from .resources import TOKEN, ResourceVector
from .trace import AuditLog, EventKind, emit

DURATION = "duration"


@dataclass(frozen=True)
class TokenBreakdown:
    input_tokens: int = 0
    reasoning_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        for name in ("input_tokens", "reasoning_tokens", "output_tokens"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise errors.NegativeDelta(f"{name}={v!r}")

    @property
    def total(self) -> int:
        return self.input_tokens + self.reasoning_tokens + self.output_tokens

    def __add__(self, other: "TokenBreakdown") -> "TokenBreakdown":
        return TokenBreakdown(
            self.input_tokens + other.input_tokens,
            self.reasoning_tokens + other.reasoning_tokens,
            self.output_tokens + other.output_tokens,
        )

    def to_dict(self) -> dict[str, int]:
        return {"input": self.input_tokens, "reasoning": self.reasoning_tokens, "output": self.output_tokens}


class Ledger:
    """Cumulative consumption for one contract.

    ``per_skill_calls`` lives here so skill authorization reads its prior-call
    count from the same place consumption is recorded.
    """

    def __init__(self, contract: Contract) -> None:
        self.contract = contract
        self.consumed = ResourceVector()
        self.token_detail = TokenBreakdown()
        self.per_skill_calls: dict[str, int] = {}
        self.violated: set[str] = set()
        self.sequence = 0
        self.fired_alerts: set[tuple[float, str]] = set()
        self._lock = threading.Lock()

    @property
    def contract_id(self) -> str:
        return self.contract.contract_id

    @property
    def violated_dimensions(self) -> frozenset[str]:
        return frozenset(self.violated)

    def remaining(self) -> ResourceVector:
        """Budget left on each bounded dimension, floored at 0."""
        return self.contract.budget.saturating_sub(self.consumed)

    def calls(self, skill_id: str) -> int:
        return self.per_skill_calls.get(skill_id, 0)


class RecordResult(NamedTuple):
    snapshot: ResourceVector
    newly_violated: frozenset[str]


def open_ledger(contract: Contract) -> Ledger:
    if contract.temporal.t_start is None:
        raise errors.NotActivated(contract.contract_id)
    return Ledger(contract)


def record_consumption(
    ledger: Ledger,
    delta: ResourceVector | dict[str, int],
    token_detail: TokenBreakdown | None = None,
    skill_id: str | Sequence[str] | None = None,
    now: int = 0,
    log: AuditLog | None = None,
) -> RecordResult:
    try:
        delta = ResourceVector.coerce(delta)
    except ValueError as exc:
        raise errors.NegativeDelta(str(exc)) from exc
    if token_detail is None:
        # unattributed tokens count as output
        token_detail = TokenBreakdown(output_tokens=delta.get(TOKEN))
    elif token_detail.total != delta.get(TOKEN):
        raise errors.TokenMismatch(f"token_detail.total={token_detail.total} but delta[token]={delta.get(TOKEN)}")
    skills = [skill_id] if isinstance(skill_id, str) else list(skill_id or [])

    with ledger._lock:
        contract = ledger.contract
        if contract.state is not State.ACTIVE:
            raise errors.ContractNotActive(f"{contract.contract_id} is {contract.state.value}")
        before = ledger.violated
        ledger.consumed = ledger.consumed + delta
        ledger.token_detail = ledger.token_detail + token_detail
        for s in skills:
            ledger.per_skill_calls[s] = ledger.per_skill_calls.get(s, 0) + 1
        ledger.violated = set(violated_dimensions(contract.budget, ledger.consumed))
        newly = frozenset(ledger.violated - before)
        ledger.sequence += 1
        snapshot = ledger.consumed
        emit(
            log, EventKind.CONSUMPTION, contract.contract_id, now,
            ledger_seq=ledger.sequence,
            delta=delta.to_dict(),
            snapshot=snapshot.to_dict(),
            token_detail=token_detail.to_dict(),
            skills=skills,
            newly_violated=sorted(newly),
        )
    return RecordResult(snapshot, newly)


def refresh_violations(ledger: Ledger) -> None:
    """Recompute violated dimensions after a budget amendment."""
    with ledger._lock:
        ledger.violated = set(violated_dimensions(ledger.contract.budget, ledger.consumed))


class ControllableBudget(NamedTuple):
    tokens: int
    exhausted: bool


def controllable_budget(total_token_budget: int, input_tokens: int) -> ControllableBudget:
    """Tokens left for reasoning and output once the input is paid for."""
    if input_tokens >= total_token_budget:
        return ControllableBudget(0, True)
    return ControllableBudget(total_token_budget - input_tokens, False)


@dataclass(frozen=True)
class UtilizationReport:
    consumption: ResourceVector
    utilization: dict[str, float]
    tau_util: float
    aggregate: float
    elapsed_ms: int = 0

    def ratios(self) -> dict[str, float]:
        """Per-dimension utilization plus the duration ratio under ``"duration"``."""
        out = dict(self.utilization)
        out[DURATION] = self.tau_util
        return out


def utilization_ratio(consumed: int, budget: int) -> float:
    if budget == 0:
        return math.inf if consumed > 0 else 0.0
    return consumed / budget


def monitor(contract: Contract, ledger: Ledger, now: int) -> UtilizationReport:
    t_start = contract.temporal.t_start
    if t_start is None:
        raise errors.NotActivated(contract.contract_id)
    consumed = ledger.consumed
    util = {dim: utilization_ratio(consumed.get(dim), b) for dim, b in contract.budget.items()}
    elapsed = now - t_start
    tau_util = max(elapsed, 0) / contract.temporal.tau_ms
    aggregate = max([tau_util, *util.values()])
    return UtilizationReport(consumed, util, tau_util, aggregate, elapsed)


@dataclass(frozen=True)
class Alert:
    threshold: float
    dimension: str
    utilization: float


def validate_thresholds(thresholds: Sequence[float]) -> None:
    prev = 0.0
    for t in thresholds:
        if not (0.0 < t <= 1.0) or t <= prev:
            raise errors.UnsortedThresholds(f"thresholds must be strictly increasing in (0, 1]: {list(thresholds)}")
        prev = t


def check_thresholds(
    ledger: Ledger,
    report: UtilizationReport,
    thresholds: Sequence[float],
    now: int = 0,
    log: AuditLog | None = None,
) -> list[Alert]:
    """Fire each (threshold, dimension) alert the first time it is reached."""
    validate_thresholds(thresholds)
    ratios = report.ratios()
    fired = []
    with ledger._lock:
        for t in thresholds:
            for dim in sorted(ratios):
                u = ratios[dim]
                key = (t, dim)
                if u >= t and key not in ledger.fired_alerts:
                    ledger.fired_alerts.add(key)
                    fired.append(Alert(t, dim, u))
                    emit(log, EventKind.ALERT, ledger.contract_id, now, threshold=t, dimension=dim,
                         utilization=_jsonable_ratio(u))
    return fired


def _jsonable_ratio(u: float) -> float | str:
    return "inf" if math.isinf(u) else round(u, 9)


def format_budget_status(consumed: int, budget: int, dimension: str = TOKEN) -> str:
    """Prompt-facing status line. Overshoot is shown as-is, never clamped."""
    for name, v in (("consumed", consumed), ("budget", budget)):
        if isinstance(v, bool) or not isinstance(v, int):
            raise TypeError(f"{name} must be int, got {type(v).__name__}")
    return f"Budget: {consumed:d}/{budget:d}"


def fired_alert_keys(alerts: Iterable[Alert]) -> set[tuple[float, str]]:
    return {(a.threshold, a.dimension) for a in alerts}
