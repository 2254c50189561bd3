"""Deterministic trial runners for the three coordination patterns.

Each trial is a single-threaded event loop over an injected logical clock.
Consumption is recorded after each simulated call returns, and guards run
both before a call (the elapsed-time check) and after it (cumulative budget,
expiry, fulfillment), so a contract can overshoot by at most one call.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

from .. import errors
from ..accounting import check_thresholds, monitor, record_consumption
from ..contract import (
    Contract,
    Observation,
    State,
    apply_transition,
    authorize_skill,
    evaluate_guards,
    evaluate_success,
)
from ..delegation import (
    EQUAL,
    NEGOTIATED,
    PROPORTIONAL,
    DelegationTree,
    allocate_equal,
    allocate_negotiated,
    allocate_proportional,
)
from ..resources import COST_MICROUSD, ITERATION, LLM_CALL, TOKEN, ResourceVector
from ..trace import AuditLog
from .models import (
    CONTRACTED,
    CONVERGED,
    ITERATION_CAP,
    ITERATIVE_REFINEMENT,
    NO_SPECIALIST,
    ORCHESTRATOR_WORKERS,
    PLAN_REJECTED,
    QUALITY,
    ROUTING,
    UNCONTRACTED,
    WORKER_FAILED,
    WORKERS_FULFILLED,
    ContractTemplate,
    OrchestratorSpec,
    RoutingSpec,
    ScenarioSpec,
    SimAgentModel,
    TrialTrace,
    apply_mode,
    draw_call,
)

ROOT = "root"

log = logging.getLogger(__name__)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per trial, derived by spawning from the scenario seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))


def effective_spec(spec: ScenarioSpec) -> ScenarioSpec:
    """Resolve the condition: UNCONTRACTED strips budgets, limits and budget awareness."""
    if spec.condition == CONTRACTED:
        return spec
    dur = spec.uncontracted_duration_ms
    # children must fit inside the root's remaining time after its own calls
    child_dur = dur // 2
    agents = {k: replace(a, budget_aware=False) for k, a in spec.agents.items()}
    orch = spec.orchestrator
    if orch is not None:
        workers = tuple(
            replace(w, contract=w.contract.uncontracted(child_dur), max_iterations=spec.uncontracted_max_iterations,
                    request=None)
            for w in orch.workers
        )
        orch = replace(orch, workers=workers, allow_topups=False, cap_to_remaining=False)
    routing = spec.routing
    if routing is not None:
        specialists = tuple(
            replace(s, contract=s.contract.uncontracted(child_dur), max_iterations=spec.uncontracted_max_iterations)
            for s in routing.specialists
        )
        routing = replace(routing, specialists=specialists)
    return replace(
        spec,
        agents=agents,
        contract=spec.contract.uncontracted(dur),
        max_iterations=spec.uncontracted_max_iterations,
        orchestrator=orch,
        routing=routing,
    )


class TrialContext:
    def __init__(self, spec: ScenarioSpec, trial: int, mode: str | None = None) -> None:
        self.spec = spec
        self.trial = trial
        self.mode = mode
        self.rng = trial_rng(spec.seed, trial)
        self.log = AuditLog()
        self.tree = DelegationTree(self.log)
        self.now = 0
        self.disposition = "completed"
        self.conservation: list[dict] | None = None

    def step(self, contract: Contract, truth: dict[str, bool], error: str | None = None) -> bool:
        """Evaluate guards and apply any transition. Returns True once terminal."""
        led = self.tree.ledger(contract.contract_id)
        obs = Observation(led.consumed, self.now, criterion_truth=truth, error=error)
        decision = evaluate_guards(contract, obs)
        apply_transition(contract, decision, self.now, self.log)
        return contract.is_terminal

    def finish(self, iterations: int) -> TrialTrace:
        nodes = self.tree.nodes
        return TrialTrace(
            trial=self.trial,
            condition=self.spec.condition,
            events=list(self.log.events),
            outcome={cid: n.contract.state.value for cid, n in nodes.items()},
            totals={cid: n.consumed for cid, n in nodes.items()},
            success=nodes[ROOT].contract.state is State.FULFILLED,
            iterations_used=iterations,
            primary_id=ROOT,
            mode=self.mode,
            disposition=self.disposition,
            conservation=self.conservation,
            reasoning_tokens=sum(n.ledger.token_detail.reasoning_tokens for n in nodes.values() if n.ledger),
        )


def criterion_truth(contract: Contract, converged: bool, quality_ok: bool, workers_ok: bool = False) -> dict[str, bool]:
    known = {CONVERGED: converged, QUALITY: converged and quality_ok, WORKERS_FULFILLED: workers_ok}
    return {cid: known.get(cid, False) for cid in contract.success.ids}


@dataclass
class TopUpPolicy:
    threshold: float
    fraction: float


def run_agent_loop(
    ctx: TrialContext,
    contract_id: str,
    roles: Sequence[SimAgentModel],
    template: ContractTemplate,
    max_iterations: int,
    topup: TopUpPolicy | None = None,
    cap_to_remaining: bool = False,
) -> int:
    """Drive one contract through up to ``max_iterations`` rounds of ``roles``.

    The first role produces the work and owns the convergence and quality
    draws; the last role's call carries the verdict. An iteration that ends
    without fulfillment consumes one unit of the ``iteration`` dimension.
    Returns the number of iterations started.
    """
    tree, rng = ctx.tree, ctx.rng
    contract = tree.contract(contract_id)
    ledger = tree.ledger(contract_id)
    producer = roles[0]
    quality_ok = producer.quality.draw(rng) >= contract.output.q_min
    truth = criterion_truth(contract, False, quality_ok)
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        for k, model in enumerate(roles):
            if ctx.step(contract, truth):
                return iteration
            if topup is not None and model.budget_aware:
                _maybe_top_up(ctx, contract, topup)
            report = monitor(contract, ledger, ctx.now)
            cap = template.per_call_token_cap
            if cap_to_remaining and TOKEN in contract.budget:
                left = ledger.remaining().get(TOKEN)
                cap = left if cap is None else min(cap, left)
            call = draw_call(model, rng, report.aggregate, template.reasoning_multiplier, cap)

            used = []
            for skill_id in sorted(model.skill_usage):
                if rng.random() < model.skill_usage[skill_id]:
                    if authorize_skill(contract, skill_id, ledger.calls(skill_id)).allowed:
                        used.append(skill_id)
            delta = {TOKEN: call.total, LLM_CALL: 1}
            for s in used:
                delta[s] = delta.get(s, 0) + 1
            if model.microusd_per_token:
                delta[COST_MICROUSD] = int(round(call.total * model.microusd_per_token))
            if k == len(roles) - 1:
                converged = bool(rng.random() < producer.convergence_prob)
                truth = criterion_truth(contract, converged, quality_ok)
                if not evaluate_success(contract.success, truth).fulfilled:
                    delta[ITERATION] = 1

            ctx.now += call.latency_ms
            record_consumption(ledger, delta, call.tokens, used, ctx.now, ctx.log)
            check_thresholds(ledger, monitor(contract, ledger, ctx.now), ctx.spec.thresholds, ctx.now, ctx.log)
            if ctx.step(contract, truth):
                return iteration
    ctx.step(contract, truth, error=ITERATION_CAP)
    return iteration


def _maybe_top_up(ctx: TrialContext, contract: Contract, policy: TopUpPolicy) -> None:
    if contract.parent_id is None or TOKEN not in contract.budget:
        return
    ledger = ctx.tree.ledger(contract.contract_id)
    report = monitor(contract, ledger, ctx.now)
    if report.utilization.get(TOKEN, 0.0) < policy.threshold:
        return
    pool = ctx.tree.pools[contract.parent_id]
    want = max(1, math.ceil(contract.budget[TOKEN] * policy.fraction))
    amount = min(want, pool.available.get(TOKEN))
    if amount > 0:
        ctx.tree.request_top_up(contract.contract_id, ResourceVector({TOKEN: amount}), ctx.now)


# -- pattern runners ---------------------------------------------------------


def _trial_ids(spec: ScenarioSpec) -> Iterator[tuple[int, str | None, ScenarioSpec]]:
    """Yield (trial index, mode, mode-adjusted spec). Modes share trial seeds."""
    for mode in spec.modes or (None,):
        s = spec if mode is None else replace(spec, contract=apply_mode(mode, spec.contract))
        for t in range(spec.trials):
            yield t, mode, s


def _check_pattern(spec: ScenarioSpec, pattern: str) -> None:
    if spec.pattern != pattern:
        raise errors.InvalidPattern(f"scenario pattern is {spec.pattern!r}, runner expects {pattern!r}")


def run_iterative_refinement(spec: ScenarioSpec) -> list[TrialTrace]:
    _check_pattern(spec, ITERATIVE_REFINEMENT)
    traces = []
    for t, mode, s in _trial_ids(spec):
        eff = effective_spec(s)
        ctx = TrialContext(eff, t, mode)
        ctx.tree.draft(eff.contract.to_spec(ROOT), ctx.now)
        ctx.tree.activate(ROOT, ctx.now)
        roles = [eff.agent(r) for r in eff.sequence]
        iterations = run_agent_loop(ctx, ROOT, roles, eff.contract, eff.max_iterations)
        traces.append(ctx.finish(iterations))
    return traces


def _plan(orch: OrchestratorSpec, basis: ResourceVector, labels: list[str]):
    if orch.strategy == PROPORTIONAL:
        return allocate_proportional(basis, [w.weight for w in orch.workers], orch.reserve_fraction, ROOT, labels)
    if orch.strategy == EQUAL:
        return allocate_equal(basis, len(orch.workers), orch.reserve_fraction, ROOT, labels)
    if orch.strategy == NEGOTIATED:
        requests = [ResourceVector(dict(w.request or {})) for w in orch.workers]
        return allocate_negotiated(basis, requests, orch.reserve_fraction, orch.cap_multiplier, ROOT, labels)
    raise ValueError(f"unknown strategy {orch.strategy!r}")


def run_orchestrator_workers(spec: ScenarioSpec) -> list[TrialTrace]:
    _check_pattern(spec, ORCHESTRATOR_WORKERS)
    traces = []
    for t, mode, s in _trial_ids(spec):
        eff = effective_spec(s)
        orch = eff.orchestrator
        assert orch is not None
        ctx = TrialContext(eff, t, mode)
        tree = ctx.tree
        root = tree.draft(eff.contract.to_spec(ROOT), ctx.now)
        tree.activate(ROOT, ctx.now)
        iterations = _orchestrate(ctx, root, orch, eff)
        if not root.is_terminal and not ctx.step(root, criterion_truth(root, False, False, _all_fulfilled(ctx))):
            ctx.step(root, criterion_truth(root, False, False), error=WORKER_FAILED)
        ctx.conservation = [f.to_dict() for f in tree.verify(ctx.now)]
        if ctx.conservation and ctx.disposition == "completed":
            ctx.disposition = "conservation_violation"
        traces.append(ctx.finish(iterations))
    return traces


def _all_fulfilled(ctx: TrialContext) -> bool:
    kids = ctx.tree.children(ROOT)
    return bool(kids) and all(c.state is State.FULFILLED for c in kids)


def _orchestrate(ctx: TrialContext, root: Contract, orch: OrchestratorSpec, spec: ScenarioSpec) -> int:
    tree = ctx.tree
    planner = spec.agent(orch.agent)
    truth = criterion_truth(root, False, False)
    # planning call, charged to the orchestrator's own contract
    if ctx.step(root, truth):
        return 0
    ledger = tree.ledger(ROOT)
    call = draw_call(planner, ctx.rng, monitor(root, ledger, ctx.now).aggregate, spec.contract.reasoning_multiplier,
                     spec.contract.per_call_token_cap)
    ctx.now += call.latency_ms
    record_consumption(ledger, {TOKEN: call.total, LLM_CALL: 1}, call.tokens, None, ctx.now, ctx.log)
    if ctx.step(root, truth):
        return 0

    labels = [f"{ROOT}/{w.role}" for w in orch.workers]
    plan = _plan(orch, tree.remaining(ROOT), labels)
    specs = [w.contract.to_spec(label) for w, label in zip(orch.workers, labels)]
    try:
        tree.draft_subcontracts(ROOT, plan, specs, ctx.now)
    except (errors.ConservationViolation, errors.TemporalOverrun) as exc:
        log.warning("trial %d: plan rejected: %s", ctx.trial, exc)
        ctx.disposition = "plan_rejected"
        ctx.step(root, truth, error=PLAN_REJECTED)
        return 0

    topup = TopUpPolicy(orch.topup_threshold, orch.topup_fraction) if orch.allow_topups else None
    iterations = 0
    for worker, label in zip(orch.workers, labels):
        tree.activate(label, ctx.now)
        iterations += run_agent_loop(
            ctx, label, [spec.agent(worker.agent)], worker.contract, worker.max_iterations,
            topup=topup, cap_to_remaining=orch.cap_to_remaining,
        )
        tree.release(label, ctx.now)
    return iterations


def select_specialist(routing: RoutingSpec, required: Sequence[str], headroom: ResourceVector):
    """Cheapest specialist covering every required skill and fitting the headroom.

    Ties break on specialist id so selection is reproducible.
    """
    need = set(required)
    fits = [
        s for s in routing.specialists
        if need <= s.skill_ids and ResourceVector(dict(s.contract.budget)).le_bounded(headroom)
    ]
    if not fits:
        return None
    return min(fits, key=lambda s: (s.cost_estimate_total, s.specialist_id))


def run_routing(spec: ScenarioSpec) -> list[TrialTrace]:
    _check_pattern(spec, ROUTING)
    traces = []
    for t, mode, s in _trial_ids(spec):
        eff = effective_spec(s)
        routing = eff.routing
        assert routing is not None
        ctx = TrialContext(eff, t, mode)
        tree = ctx.tree
        root = tree.draft(eff.contract.to_spec(ROOT), ctx.now)
        tree.activate(ROOT, ctx.now)
        task = routing.tasks[int(ctx.rng.integers(len(routing.tasks)))]
        chosen = select_specialist(routing, task.required_skills, tree.remaining(ROOT))
        iterations = 0
        if chosen is None:
            ctx.disposition = "no_specialist"
            ctx.step(root, criterion_truth(root, False, False), error=NO_SPECIALIST)
        else:
            label = f"{ROOT}/{chosen.specialist_id}"
            request = ResourceVector(dict(chosen.contract.budget))
            plan = allocate_negotiated(tree.remaining(ROOT), [request], routing.reserve_fraction,
                                       routing.cap_multiplier, ROOT, [label])
            tree.draft_subcontracts(ROOT, plan, [chosen.contract.to_spec(label)], ctx.now)
            tree.activate(label, ctx.now)
            iterations = run_agent_loop(ctx, label, [eff.agent(chosen.agent)], chosen.contract,
                                        chosen.max_iterations)
            tree.release(label, ctx.now)
            if not ctx.step(root, criterion_truth(root, False, False, _all_fulfilled(ctx))):
                ctx.step(root, criterion_truth(root, False, False), error=WORKER_FAILED)
            ctx.conservation = [f.to_dict() for f in tree.verify(ctx.now)]
            if ctx.conservation:
                ctx.disposition = "conservation_violation"
        trace = ctx.finish(iterations)
        trace.task_id = task.task_id
        traces.append(trace)
    return traces


RUNNERS = {
    ITERATIVE_REFINEMENT: run_iterative_refinement,
    ORCHESTRATOR_WORKERS: run_orchestrator_workers,
    ROUTING: run_routing,
}


def run_scenario(spec: ScenarioSpec) -> list[TrialTrace]:
    try:
        runner = RUNNERS[spec.pattern]
    except KeyError:
        raise errors.InvalidPattern(spec.pattern) from None
    return runner(spec)


__all__ = [
    "CONTRACTED",
    "UNCONTRACTED",
    "TrialContext",
    "effective_spec",
    "run_agent_loop",
    "run_iterative_refinement",
    "run_orchestrator_workers",
    "run_routing",
    "run_scenario",
    "select_specialist",
    "trial_rng",
]
