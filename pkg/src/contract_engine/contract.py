"""Contract tuple and lifecycle state machine.

A contract moves DRAFTED -> ACTIVE -> one terminal state. Guards are
evaluated against an :class:`Observation`; when several hold at once the
winner is picked by a fixed precedence (cancel/fatal error, resource
exhaustion, duration expiry, success) so that a breached contract is never
recorded as fulfilled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Sequence

from . import errors
from .resources import ResourceVector
from .trace import AuditLog, EventKind, emit


class State(str, Enum):
    DRAFTED = "DRAFTED"
    ACTIVE = "ACTIVE"
    FULFILLED = "FULFILLED"
    VIOLATED = "VIOLATED"
    EXPIRED = "EXPIRED"
    TERMINATED = "TERMINATED"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_STATES


TERMINAL_STATES = frozenset({State.FULFILLED, State.VIOLATED, State.EXPIRED, State.TERMINATED})

# guard names, in precedence order
GUARD_CANCEL = "cancel"
GUARD_FATAL = "fatal_error"
GUARD_EXHAUSTION = "resource_exhaustion"
GUARD_EXPIRY = "duration_expiry"
GUARD_SUCCESS = "success"


@dataclass(frozen=True)
class InputSpec:
    schema_id: str
    validation_rules: tuple[str, ...] = ()
    preprocessing_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class OutputSpec:
    schema_id: str
    q_min: float = 0.0
    format_id: str = ""


@dataclass(frozen=True)
class SkillSpec:
    skill_id: str
    cost_estimate: ResourceVector = field(default_factory=ResourceVector)
    success_prob: float = 1.0
    call_limit: int | None = None


@dataclass
class TemporalConstraint:
    tau_ms: int
    t_start: int | None = None

    @property
    def deadline(self) -> int | None:
        return None if self.t_start is None else self.t_start + self.tau_ms


@dataclass(frozen=True)
class SuccessCriteria:
    """Weighted criteria; weights are stored normalized to sum to 1."""

    criteria: tuple[tuple[str, float], ...]
    theta: float

    @classmethod
    def build(cls, criteria: Sequence[tuple[str, float]] | Mapping[str, float], theta: float) -> "SuccessCriteria":
        items = list(criteria.items()) if isinstance(criteria, Mapping) else [tuple(c) for c in criteria]
        seen: set[str] = set()
        for cid, w in items:
            if cid in seen:
                raise errors.DuplicateCriterion(cid)
            seen.add(cid)
            if not (isinstance(w, (int, float)) and math.isfinite(w)) or w < 0:
                raise errors.InvalidSpec(f"criterion {cid!r} has invalid weight {w!r}")
        if not (0.0 <= theta <= 1.0):
            raise errors.InvalidThreshold(f"theta={theta} outside [0, 1]")
        total = math.fsum(w for _, w in items)
        if items and total <= 0:
            raise errors.InvalidSpec("criterion weights sum to zero")
        normalized = tuple((cid, w / total) for cid, w in items)
        return cls(normalized, float(theta))

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(cid for cid, _ in self.criteria)


@dataclass(frozen=True)
class TerminationConditions:
    accept_cancel_signal: bool = True
    fatal_error_codes: frozenset[str] = frozenset()

    # always part of the termination set, never configurable
    resource_exhaustion: bool = field(default=True, init=False)
    duration_expiry: bool = field(default=True, init=False)


@dataclass(frozen=True)
class ContractSpec:
    """Everything needed to draft a contract."""

    contract_id: str
    input: InputSpec
    output: OutputSpec
    skills: tuple[SkillSpec, ...]
    budget: ResourceVector
    tau_ms: int
    success: SuccessCriteria
    termination: TerminationConditions = TerminationConditions()
    parent_id: str | None = None


@dataclass
class Contract:
    contract_id: str
    input: InputSpec
    output: OutputSpec
    skills: tuple[SkillSpec, ...]
    budget: ResourceVector
    temporal: TemporalConstraint
    success: SuccessCriteria
    termination: TerminationConditions
    parent_id: str | None = None
    state: State = State.DRAFTED
    terminal_cause: dict[str, Any] | None = None

    @property
    def is_terminal(self) -> bool:
        return self.state.terminal

    def skill(self, skill_id: str) -> SkillSpec | None:
        for s in self.skills:
            if s.skill_id == skill_id:
                return s
        return None

    def violated_dimensions(self, consumption: ResourceVector) -> list[str]:
        return violated_dimensions(self.budget, consumption)


def violated_dimensions(budget: ResourceVector, consumption: ResourceVector) -> list[str]:
    """Bounded dimensions where the exhaustion guard holds.

    The guard is inclusive (c >= b).  A zero budget marks the dimension as
    forbidden, which is breached by any positive consumption only.
    """
    out = []
    for dim in sorted(budget):
        b, c = budget[dim], consumption.get(dim)
        if (b > 0 and c >= b) or (b == 0 and c > 0):
            out.append(dim)
    return out


@dataclass(frozen=True)
class Observation:
    consumption: ResourceVector
    now: int
    cancel: bool = False
    criterion_truth: Mapping[str, bool] = field(default_factory=dict)
    error: str | None = None


@dataclass(frozen=True)
class Decision:
    """Outcome of guard evaluation. ``target is None`` means stay ACTIVE."""

    from_state: State
    target: State | None
    cause: dict[str, Any] = field(default_factory=dict)

    @property
    def stays(self) -> bool:
        return self.target is None


@dataclass(frozen=True)
class SuccessResult:
    score: float
    fulfilled: bool


@dataclass(frozen=True)
class SkillDecision:
    allowed: bool
    reason: str | None = None


_SCORE_EPS = 1e-12

NOT_IN_SKILL_SET = "NotInSkillSet"
SKILL_LIMIT_REACHED = "SkillLimitReached"


def draft_contract(spec: ContractSpec, now: int = 0, log: AuditLog | None = None) -> Contract:
    budget = _checked_budget(spec.budget)
    if isinstance(spec.tau_ms, bool) or not isinstance(spec.tau_ms, int) or spec.tau_ms <= 0:
        raise errors.InvalidDuration(f"tau must be a positive integer of ms, got {spec.tau_ms!r}")
    if not spec.input.schema_id:
        raise errors.InvalidSpec("input schema_id is empty")
    if len(set(spec.input.validation_rules)) != len(spec.input.validation_rules):
        raise errors.InvalidSpec("duplicate input validation rule names")
    if not (0.0 <= spec.output.q_min <= 1.0):
        raise errors.InvalidThreshold(f"q_min={spec.output.q_min} outside [0, 1]")
    # re-normalize defensively; build() is idempotent on normalized input
    success = SuccessCriteria.build(spec.success.criteria, spec.success.theta)

    seen: set[str] = set()
    for s in spec.skills:
        if s.skill_id in seen:
            raise errors.DuplicateSkill(s.skill_id)
        seen.add(s.skill_id)
        if not (0.0 <= s.success_prob <= 1.0):
            raise errors.InvalidThreshold(f"skill {s.skill_id!r} success_prob={s.success_prob}")
        if s.call_limit is not None and s.call_limit < 0:
            raise errors.InvalidSpec(f"skill {s.skill_id!r} has negative call_limit")

    contract = Contract(
        contract_id=spec.contract_id,
        input=spec.input,
        output=spec.output,
        skills=tuple(spec.skills),
        budget=budget,
        temporal=TemporalConstraint(spec.tau_ms),
        success=success,
        termination=spec.termination,
        parent_id=spec.parent_id,
    )
    emit(
        log, EventKind.DRAFTED, contract.contract_id, now,
        parent_id=contract.parent_id,
        budget=budget.to_dict(),
        tau_ms=spec.tau_ms,
        skills=[s.skill_id for s in contract.skills],
        criteria=[[cid, w] for cid, w in success.criteria],
        theta=success.theta,
    )
    return contract


def _checked_budget(budget: Any) -> ResourceVector:
    if isinstance(budget, ResourceVector):
        return budget
    try:
        return ResourceVector(budget or {})
    except (TypeError, ValueError) as exc:
        raise errors.InvalidBudget(str(exc)) from exc


def activate(contract: Contract, now: int, available: bool = True, log: AuditLog | None = None) -> Contract:
    if contract.state is not State.DRAFTED:
        raise errors.NotDrafted(f"{contract.contract_id} is {contract.state.value}")
    if not available:
        raise errors.ResourcesUnavailable(contract.contract_id)
    contract.temporal.t_start = int(now)
    contract.state = State.ACTIVE
    emit(log, EventKind.ACTIVE, contract.contract_id, now, t_start=int(now), tau_ms=contract.temporal.tau_ms)
    return contract


def evaluate_success(success: SuccessCriteria, criterion_truth: Mapping[str, bool]) -> SuccessResult:
    hits = []
    for cid, w in success.criteria:
        if cid not in criterion_truth:
            raise errors.MissingCriterion(cid)
        if criterion_truth[cid]:
            hits.append(w)
    score = min(math.fsum(hits), 1.0)
    # normalized weights sum to 1 only up to rounding
    return SuccessResult(score, score >= success.theta - _SCORE_EPS)


def evaluate_guards(contract: Contract, obs: Observation) -> Decision:
    if contract.state is not State.ACTIVE:
        raise errors.NotActive(f"{contract.contract_id} is {contract.state.value}")

    fired: list[str] = []
    cause: dict[str, Any] = {}
    term = contract.termination

    if obs.cancel and term.accept_cancel_signal:
        fired.append(GUARD_CANCEL)
    if obs.error is not None and obs.error in term.fatal_error_codes:
        fired.append(GUARD_FATAL)
        cause["error"] = obs.error
    dims = violated_dimensions(contract.budget, obs.consumption)
    if dims:
        fired.append(GUARD_EXHAUSTION)
        cause["dimensions"] = dims
    elapsed = obs.now - contract.temporal.t_start
    if elapsed > contract.temporal.tau_ms:
        fired.append(GUARD_EXPIRY)
        cause["elapsed_ms"] = elapsed
    result = evaluate_success(contract.success, obs.criterion_truth)
    if result.fulfilled:
        fired.append(GUARD_SUCCESS)
        cause["score"] = result.score

    if not fired:
        return Decision(State.ACTIVE, None)

    head = fired[0]
    target = {
        GUARD_CANCEL: State.TERMINATED,
        GUARD_FATAL: State.TERMINATED,
        GUARD_EXHAUSTION: State.VIOLATED,
        GUARD_EXPIRY: State.EXPIRED,
        GUARD_SUCCESS: State.FULFILLED,
    }[head]
    cause["guards"] = fired
    return Decision(State.ACTIVE, target, cause)


def authorize_skill(contract: Contract, skill_id: str, prior_calls_of_skill: int) -> SkillDecision:
    if contract.state is not State.ACTIVE:
        raise errors.NotActive(f"{contract.contract_id} is {contract.state.value}")
    skill = contract.skill(skill_id)
    if skill is None:
        return SkillDecision(False, NOT_IN_SKILL_SET)
    if skill.call_limit is not None and prior_calls_of_skill >= skill.call_limit:
        return SkillDecision(False, SKILL_LIMIT_REACHED)
    return SkillDecision(True)


def apply_transition(contract: Contract, decision: Decision, now: int, log: AuditLog | None = None) -> Contract:
    if contract.is_terminal:
        raise errors.AlreadyTerminal(f"{contract.contract_id} is already {contract.state.value}")
    if decision.from_state is not contract.state:
        raise errors.LifecycleError(
            f"decision computed for {decision.from_state.value}, contract is {contract.state.value}"
        )
    if decision.target is None:
        return contract
    if decision.target not in TERMINAL_STATES:
        raise errors.LifecycleError(f"cannot transition ACTIVE -> {decision.target.value}")
    contract.state = decision.target
    contract.terminal_cause = dict(decision.cause)
    emit(log, EventKind(decision.target.value), contract.contract_id, now, cause=contract.terminal_cause)
    return contract


def terminate(contract: Contract, now: int, reason: str, log: AuditLog | None = None) -> Contract:
    """Cancel an ACTIVE contract from outside the guard loop."""
    decision = Decision(contract.state, State.TERMINATED, {"guards": [GUARD_CANCEL], "reason": reason})
    return apply_transition(contract, decision, now, log)


def with_budget(spec: ContractSpec, budget: ResourceVector, parent_id: str | None) -> ContractSpec:
    return replace(spec, budget=budget, parent_id=parent_id)
