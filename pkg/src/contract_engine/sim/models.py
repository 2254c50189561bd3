"""Synthetic agents, contract templates, and scenario descriptions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from ..accounting import TokenBreakdown
from ..contract import (
    ContractSpec,
    InputSpec,
    OutputSpec,
    SkillSpec,
    SuccessCriteria,
    TerminationConditions,
)
from ..resources import ResourceVector
from ..trace import TraceEvent

ITERATIVE_REFINEMENT = "iterative_refinement"
ROUTING = "routing"
ORCHESTRATOR_WORKERS = "orchestrator_workers"
PATTERNS = (ITERATIVE_REFINEMENT, ROUTING, ORCHESTRATOR_WORKERS)

CONTRACTED = "CONTRACTED"
UNCONTRACTED = "UNCONTRACTED"
CONDITIONS = (CONTRACTED, UNCONTRACTED)

# error codes the harness raises into a contract's fatal set
ITERATION_CAP = "IterationCapReached"
NO_SPECIALIST = "NoSpecialist"
WORKER_FAILED = "WorkerFailed"
PLAN_REJECTED = "PlanRejected"
HARNESS_ERRORS = (ITERATION_CAP, NO_SPECIALIST, WORKER_FAILED, PLAN_REJECTED)

# criterion ids the simulator knows how to evaluate
CONVERGED = "converged"
QUALITY = "quality"
WORKERS_FULFILLED = "workers_fulfilled"
SIM_CRITERIA = (CONVERGED, QUALITY, WORKERS_FULFILLED)

# mode -> (timeout ms, reasoning-token multiplier)
MODES: dict[str, tuple[int, float]] = {
    "URGENT": (8_000, 0.0),
    "ECONOMICAL": (10_000, 0.5),
    "BALANCED": (30_000, 1.0),
}

UNCONTRACTED_DURATION_MS = 86_400_000


@dataclass(frozen=True)
class Triangular:
    low: float
    mode: float
    high: float

    def __post_init__(self) -> None:
        if not (self.low <= self.mode <= self.high):
            raise ValueError(f"need low <= mode <= high, got {self.low}, {self.mode}, {self.high}")

    def draw(self, rng: np.random.Generator) -> float:
        if self.low == self.high:
            return float(self.low)
        return float(rng.triangular(self.low, self.mode, self.high))

    @property
    def mean(self) -> float:
        return (self.low + self.mode + self.high) / 3


@dataclass(frozen=True)
class TokenSplit:
    input: float = 0.3
    reasoning: float = 0.2
    output: float = 0.5

    def __post_init__(self) -> None:
        parts = (self.input, self.reasoning, self.output)
        if any(p < 0 for p in parts) or not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise ValueError(f"token split must be non-negative and sum to 1, got {parts}")


@dataclass(frozen=True)
class SimAgentModel:
    agent_id: str
    tokens: Triangular
    split: TokenSplit = TokenSplit()
    skill_usage: Mapping[str, float] = field(default_factory=dict)
    convergence_prob: float = 0.5
    quality: Triangular = Triangular(1.0, 1.0, 1.0)
    budget_aware: bool = False
    base_latency_ms: int = 500
    ms_per_token: float = 2.0
    microusd_per_token: float = 0.0

    def __post_init__(self) -> None:
        if self.tokens.low < 0:
            raise ValueError("token draws must be non-negative")
        for name, p in [("convergence_prob", self.convergence_prob), *self.skill_usage.items()]:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} probability {p} outside [0, 1]")

    @property
    def max_call_tokens(self) -> int:
        return int(math.ceil(self.tokens.high))


def budget_shrink(utilization: float) -> float:
    """Draw multiplier for budget-aware agents: 1 below half utilization, 0.3 at exhaustion."""
    if utilization < 0.5:
        return 1.0
    if utilization >= 1.0:
        return 0.3
    return 1.0 - 0.7 * (utilization - 0.5) / 0.5


@dataclass(frozen=True)
class Call:
    tokens: TokenBreakdown
    latency_ms: int

    @property
    def total(self) -> int:
        return self.tokens.total


def draw_call(
    model: SimAgentModel,
    rng: np.random.Generator,
    utilization: float = 0.0,
    reasoning_multiplier: float = 1.0,
    cap: int | None = None,
) -> Call:
    raw = model.tokens.draw(rng)
    if model.budget_aware:
        raw *= budget_shrink(utilization)
    total = int(round(raw))
    inp = math.floor(total * model.split.input)
    rsn = math.floor(total * model.split.reasoning)
    out = total - inp - rsn
    rsn = int(round(rsn * reasoning_multiplier))
    if cap is not None:
        # max_tokens-style truncation: output goes first, input last
        excess = max(inp + rsn + out - cap, 0)
        cut = min(out, excess)
        out -= cut
        excess -= cut
        cut = min(rsn, excess)
        rsn -= cut
        excess -= cut
        inp -= min(inp, excess)
    latency = model.base_latency_ms + int(round(model.ms_per_token * (rsn + out)))
    return Call(TokenBreakdown(inp, rsn, out), latency)


@dataclass(frozen=True)
class ContractTemplate:
    budget: Mapping[str, int] = field(default_factory=dict)
    duration_ms: int = 600_000
    skills: tuple[SkillSpec, ...] = ()
    criteria: tuple[tuple[str, float], ...] = ((CONVERGED, 1.0),)
    theta: float = 1.0
    q_min: float = 0.0
    input_schema: str = "task"
    output_schema: str = "result"
    format_id: str = ""
    per_call_token_cap: int | None = None
    reasoning_multiplier: float = 1.0
    fatal_error_codes: tuple[str, ...] = ()

    def to_spec(self, contract_id: str, parent_id: str | None = None) -> ContractSpec:
        return ContractSpec(
            contract_id=contract_id,
            input=InputSpec(self.input_schema),
            output=OutputSpec(self.output_schema, self.q_min, self.format_id),
            skills=self.skills,
            budget=ResourceVector(dict(self.budget)),
            tau_ms=self.duration_ms,
            success=SuccessCriteria.build(self.criteria, self.theta),
            termination=TerminationConditions(
                fatal_error_codes=frozenset(self.fatal_error_codes) | frozenset(HARNESS_ERRORS)
            ),
            parent_id=parent_id,
        )

    def uncontracted(self, duration_ms: int = UNCONTRACTED_DURATION_MS) -> "ContractTemplate":
        """Same task with no resource bounds, no call limits, and a nominal duration."""
        skills = tuple(replace(s, call_limit=None) for s in self.skills)
        return replace(self, budget={}, duration_ms=duration_ms, skills=skills, per_call_token_cap=None)


def apply_mode(mode: str, template: ContractTemplate) -> ContractTemplate:
    try:
        tau, mult = MODES[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; expected one of {sorted(MODES)}") from None
    return replace(template, duration_ms=tau, reasoning_multiplier=mult)


@dataclass(frozen=True)
class WorkerSpec:
    role: str
    agent: str
    contract: ContractTemplate
    weight: float = 1.0
    request: Mapping[str, int] | None = None
    max_iterations: int = 3


@dataclass(frozen=True)
class OrchestratorSpec:
    agent: str
    workers: tuple[WorkerSpec, ...]
    strategy: str = "proportional"
    reserve_fraction: float = 0.10
    cap_multiplier: float = 2
    allow_topups: bool = True
    topup_threshold: float = 0.8
    topup_fraction: float = 0.25
    cap_to_remaining: bool = True


@dataclass(frozen=True)
class SpecialistSpec:
    specialist_id: str
    agent: str
    contract: ContractTemplate
    max_iterations: int = 3

    @property
    def cost_estimate_total(self) -> int:
        return sum(s.cost_estimate.total() for s in self.contract.skills)

    @property
    def skill_ids(self) -> frozenset[str]:
        return frozenset(s.skill_id for s in self.contract.skills)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    required_skills: tuple[str, ...]


@dataclass(frozen=True)
class RoutingSpec:
    specialists: tuple[SpecialistSpec, ...]
    tasks: tuple[TaskSpec, ...]
    reserve_fraction: float = 0.10
    cap_multiplier: float = 2


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    pattern: str
    agents: Mapping[str, SimAgentModel]
    contract: ContractTemplate
    family: str = ""
    condition: str = CONTRACTED
    trials: int = 1
    seed: int = 0
    sequence: tuple[str, ...] = ()
    max_iterations: int = 3
    uncontracted_max_iterations: int = 6
    uncontracted_duration_ms: int = UNCONTRACTED_DURATION_MS
    orchestrator: OrchestratorSpec | None = None
    routing: RoutingSpec | None = None
    modes: tuple[str, ...] = ()
    thresholds: tuple[float, ...] = (0.8,)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}")

    def agent(self, agent_id: str) -> SimAgentModel:
        return self.agents[agent_id]

    @property
    def max_call_tokens(self) -> int:
        return max((a.max_call_tokens for a in self.agents.values()), default=0)


@dataclass
class TrialTrace:
    trial: int
    condition: str
    events: list[TraceEvent]
    outcome: dict[str, str]
    totals: dict[str, ResourceVector]
    success: bool
    iterations_used: int
    primary_id: str = "root"
    mode: str | None = None
    disposition: str = "completed"
    conservation: list[dict[str, Any]] | None = None
    reasoning_tokens: int = 0
    task_id: str | None = None

    @property
    def total(self) -> ResourceVector:
        out = ResourceVector()
        for v in self.totals.values():
            out = out + v
        return out

    @property
    def tokens(self) -> int:
        return self.total.get("token")

    @property
    def llm_calls(self) -> int:
        return self.total.get("llm_call")

    @property
    def primary_outcome(self) -> str:
        return self.outcome[self.primary_id]

    @property
    def label(self) -> str:
        return self.mode or "default"
