from dataclasses import replace

import numpy as np
import pytest

from contract_engine import errors
from contract_engine.contract import SkillSpec
from contract_engine.replay import replay
from contract_engine.resources import ResourceVector
from contract_engine.sim import (
    ContractTemplate,
    OrchestratorSpec,
    RoutingSpec,
    ScenarioSpec,
    SimAgentModel,
    SpecialistSpec,
    TaskSpec,
    TokenSplit,
    Triangular,
    WorkerSpec,
    apply_mode,
    budget_shrink,
    draw_call,
    run_iterative_refinement,
    run_orchestrator_workers,
    run_routing,
    run_scenario,
    select_specialist,
    summarize,
    trial_rng,
)
from contract_engine.sim.models import MODES

CODER = SimAgentModel("coder", Triangular(800, 2500, 9000), TokenSplit(0.35, 0.25, 0.4), convergence_prob=0.3)
REVIEWER = SimAgentModel("reviewer", Triangular(400, 1200, 4000), TokenSplit(0.6, 0.2, 0.2))
CODE_REVIEW = ContractTemplate(budget={"token": 50000, "iteration": 3}, duration_ms=600_000)


def iterative(trials=50, seed=1, condition="CONTRACTED", coder=CODER, template=CODE_REVIEW, **kw):
    return ScenarioSpec(
        name="t", pattern="iterative_refinement", agents={"coder": coder, "reviewer": REVIEWER},
        contract=template, condition=condition, trials=trials, seed=seed, sequence=("coder", "reviewer"),
        max_iterations=3, uncontracted_max_iterations=6, **kw,
    )


# -- models ------------------------------------------------------------------


def test_triangular_validates_order():
    with pytest.raises(ValueError):
        Triangular(5, 1, 10)
    with pytest.raises(ValueError):
        TokenSplit(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        SimAgentModel("a", Triangular(1, 2, 3), convergence_prob=1.5)


def test_budget_shrink_shape():
    assert budget_shrink(0.0) == 1.0 and budget_shrink(0.49) == 1.0
    assert budget_shrink(0.75) == pytest.approx(0.65)
    assert budget_shrink(1.0) == 0.3 and budget_shrink(7.0) == 0.3


def test_draw_call_cap_trims_output_first():
    m = SimAgentModel("m", Triangular(1000, 1000, 1000), TokenSplit(0.3, 0.2, 0.5))
    call = draw_call(m, np.random.default_rng(0), cap=600)
    assert call.total == 600
    assert (call.tokens.input_tokens, call.tokens.reasoning_tokens, call.tokens.output_tokens) == (300, 200, 100)
    call = draw_call(m, np.random.default_rng(0), cap=250)
    assert (call.tokens.input_tokens, call.tokens.reasoning_tokens, call.tokens.output_tokens) == (250, 0, 0)


def test_draw_call_reasoning_multiplier():
    m = SimAgentModel("m", Triangular(1000, 1000, 1000), TokenSplit(0.3, 0.2, 0.5))
    assert draw_call(m, np.random.default_rng(0), reasoning_multiplier=0.0).tokens.reasoning_tokens == 0
    assert draw_call(m, np.random.default_rng(0), reasoning_multiplier=0.5).tokens.reasoning_tokens == 100


# -- modes -------------------------------------------------------------------


def test_mode_settings():
    assert apply_mode("URGENT", CODE_REVIEW).duration_ms == 8000
    assert apply_mode("URGENT", CODE_REVIEW).reasoning_multiplier == 0.0
    assert apply_mode("ECONOMICAL", CODE_REVIEW).duration_ms == 10000
    assert apply_mode("BALANCED", CODE_REVIEW).duration_ms == 30000
    assert apply_mode("BALANCED", CODE_REVIEW).reasoning_multiplier == 1.0


@pytest.mark.parametrize("mode", sorted(MODES))
def test_mode_is_idempotent(mode):
    once = apply_mode(mode, CODE_REVIEW)
    assert apply_mode(mode, once) == once


def test_unknown_mode():
    with pytest.raises(ValueError):
        apply_mode("TURBO", CODE_REVIEW)


# -- iterative refinement ----------------------------------------------------


def test_both_conditions_run_from_one_spec():
    spec = iterative(trials=20)
    c = run_iterative_refinement(spec)
    u = run_iterative_refinement(replace(spec, condition="UNCONTRACTED"))
    assert len(c) == len(u) == 20
    assert max(t.iterations_used for t in c) <= 3 and max(t.iterations_used for t in u) <= 6


def test_certain_convergence_fulfills_on_first_round():
    coder = replace(CODER, convergence_prob=1.0)
    spec = iterative(trials=25, seed=9, coder=coder)
    for tr in run_iterative_refinement(spec):
        assert tr.primary_outcome == "FULFILLED" and tr.iterations_used == 1
        # oracle: the same trial stream, drawn by hand
        rng = trial_rng(9, tr.trial)
        first = draw_call(coder, rng).total
        second = draw_call(REVIEWER, rng).total
        assert tr.tokens == first + second


def test_zero_convergence_never_succeeds_and_overshoot_is_one_call():
    coder = replace(CODER, convergence_prob=0.0, tokens=Triangular(5000, 20000, 40000))
    spec = iterative(trials=200, seed=3, coder=coder)
    max_call = coder.max_call_tokens
    for tr in run_iterative_refinement(spec):
        assert tr.primary_outcome in ("VIOLATED", "EXPIRED")
        assert tr.tokens <= 50000 + max_call


def test_uncontracted_only_enforces_iteration_cap():
    coder = replace(CODER, convergence_prob=0.0)
    traces = run_iterative_refinement(iterative(trials=30, condition="UNCONTRACTED", coder=coder))
    for tr in traces:
        assert tr.primary_outcome == "TERMINATED" and tr.iterations_used == 6
        assert tr.llm_calls == 12


def test_same_seed_same_events():
    spec = iterative(trials=10, seed=5)
    a = [[e.to_line() for e in t.events] for t in run_iterative_refinement(spec)]
    b = [[e.to_line() for e in t.events] for t in run_iterative_refinement(spec)]
    assert a == b
    c = [[e.to_line() for e in t.events] for t in run_iterative_refinement(replace(spec, seed=6))]
    assert a != c


def test_trace_events_are_ordered():
    for tr in run_iterative_refinement(iterative(trials=10)):
        keys = [(e.logical_time_ms, e.seq) for e in tr.events]
        assert keys == sorted(keys) and len({e.seq for e in tr.events}) == len(keys)


def test_runner_rejects_wrong_pattern():
    with pytest.raises(errors.InvalidPattern):
        run_routing(iterative())
    with pytest.raises(errors.InvalidPattern):
        run_scenario(replace(iterative(), pattern="auction"))


def test_modes_share_trial_seeds_and_label_traces():
    spec = replace(iterative(trials=5), modes=("URGENT", "BALANCED"))
    traces = run_iterative_refinement(spec)
    assert [t.mode for t in traces] == ["URGENT"] * 5 + ["BALANCED"] * 5
    urgent = [t.reasoning_tokens for t in traces[:5]]
    assert urgent == [0] * 5


# -- orchestrator-workers ----------------------------------------------------

PLANNER = SimAgentModel("planner", Triangular(500, 1000, 2000))
RESEARCHER = SimAgentModel("researcher", Triangular(2000, 5000, 16000), skill_usage={"web_search": 0.9},
                           convergence_prob=0.5, budget_aware=True)
ANALYZER = SimAgentModel("analyzer", Triangular(1500, 4000, 12000), convergence_prob=0.5, budget_aware=True)
REPORTER = SimAgentModel("reporter", Triangular(1000, 3000, 8000), convergence_prob=0.6, budget_aware=True)
SEARCH = SkillSpec("web_search", ResourceVector(token=500), 0.9, 6)


def research(orch_kw=None, agents=None, **kw):
    workers = (
        WorkerSpec("researcher", "researcher", ContractTemplate(duration_ms=300_000, skills=(SEARCH,)), 3, None, 4),
        WorkerSpec("analyzer", "analyzer", ContractTemplate(duration_ms=300_000), 2),
        WorkerSpec("reporter", "reporter", ContractTemplate(duration_ms=300_000), 1),
    )
    orch = OrchestratorSpec("planner", workers, **(orch_kw or {}))
    base = {"planner": PLANNER, "researcher": RESEARCHER, "analyzer": ANALYZER, "reporter": REPORTER}
    base.update(agents or {})
    return ScenarioSpec(
        name="r", pattern="orchestrator_workers", agents=base,
        contract=ContractTemplate(budget={"token": 100000}, duration_ms=900_000,
                                  criteria=(("workers_fulfilled", 1.0),)),
        trials=kw.pop("trials", 40), seed=kw.pop("seed", 2), orchestrator=orch, **kw,
    )


def test_pipeline_conserves_and_limits_searches():
    for tr in run_orchestrator_workers(research()):
        assert tr.conservation == []
        assert tr.totals["root/researcher"].get("web_search") <= 6
        assert tr.total.get("token") <= 100000
        assert replay(tr.events).ok


def test_runaway_worker_is_stopped_and_accounted():
    runaway = replace(ANALYZER, tokens=Triangular(20000, 40000, 60000), convergence_prob=0.0, budget_aware=False)
    spec = research({"cap_to_remaining": False, "allow_topups": False}, agents={"analyzer": runaway}, trials=30)
    for tr in run_orchestrator_workers(spec):
        assert tr.outcome["root/analyzer"] == "VIOLATED"
        # the analyzer's share is at most 2/6 of the root budget; overshoot is one call
        assert tr.totals["root/analyzer"].get("token") < 100000 * 2 // 6 + 60000
        for w in ("root/researcher", "root/reporter"):
            if tr.outcome[w] == "VIOLATED":
                assert tr.totals[w].get("token") <= 100000
        st = replay(tr.events)
        assert st.ok
        for cid, used in tr.totals.items():
            assert {d: q for d, q in used.items() if q} == st.consumed[cid]


def test_single_worker_without_reserve_matches_plain_contract():
    spec = research({"strategy": "equal", "reserve_fraction": 0.0}, trials=10)
    only = replace(spec.orchestrator, workers=spec.orchestrator.workers[:1])
    spec = replace(spec, orchestrator=only)
    for tr in run_orchestrator_workers(spec):
        planner = tr.totals["root"].get("token")
        child = [e for e in tr.events if e.kind.value == "DRAFTED" and e.contract_id == "root/researcher"][0]
        assert child.payload["budget"]["token"] == 100000 - planner
        assert tr.outcome["root"] == ("FULFILLED" if tr.outcome["root/researcher"] == "FULFILLED" else "TERMINATED")


def test_uncontracted_pipeline_has_no_budget_checks():
    traces = run_orchestrator_workers(replace(research(trials=10), condition="UNCONTRACTED"))
    assert all(t.conservation == [] for t in traces)
    assert all("VIOLATED" not in t.outcome.values() for t in traces)


# -- routing -----------------------------------------------------------------

BILLING = SimAgentModel("billing", Triangular(400, 1200, 5000), convergence_prob=0.6)
TECH = SimAgentModel("tech", Triangular(800, 2500, 9000), convergence_prob=0.5)


def specialist(sid, agent, skills, budget=20000, cost=100):
    tmpl = ContractTemplate(budget={"token": budget}, duration_ms=300_000,
                            skills=tuple(SkillSpec(s, ResourceVector(token=cost)) for s in skills))
    return SpecialistSpec(sid, agent, tmpl)


def routing_spec(tasks, specialists, **kw):
    return ScenarioSpec(
        name="route", pattern="routing", agents={"billing": BILLING, "tech": TECH},
        contract=ContractTemplate(budget={"token": 60000}, criteria=(("workers_fulfilled", 1.0),)),
        routing=RoutingSpec(tuple(specialists), tuple(tasks)), trials=kw.pop("trials", 20), seed=4, **kw,
    )


def test_unique_cover_is_chosen():
    r = RoutingSpec((specialist("billing", "billing", ["payments"]), specialist("tech", "tech", ["logs"])), ())
    assert select_specialist(r, ["logs"], ResourceVector(token=10**6)).specialist_id == "tech"


def test_tie_breaks_on_cost_then_id():
    a = specialist("zeta", "tech", ["logs"], cost=100)
    b = specialist("alpha", "tech", ["logs"], cost=100)
    c = specialist("cheap", "tech", ["logs"], cost=50)
    head = ResourceVector(token=10**6)
    assert select_specialist(RoutingSpec((a, b), ()), ["logs"], head).specialist_id == "alpha"
    assert select_specialist(RoutingSpec((a, b, c), ()), ["logs"], head).specialist_id == "cheap"


def test_specialist_must_fit_headroom():
    big = specialist("big", "tech", ["logs"], budget=50000, cost=1)
    small = specialist("small", "tech", ["logs"], budget=5000, cost=99)
    assert select_specialist(RoutingSpec((big, small), ()), ["logs"], ResourceVector(token=10000)).specialist_id == "small"


def test_unroutable_task_consumes_nothing():
    spec = routing_spec([TaskSpec("legal", ("legal_review",))], [specialist("billing", "billing", ["payments"])])
    for tr in run_routing(spec):
        assert tr.primary_outcome == "TERMINATED" and tr.disposition == "no_specialist"
        assert tr.total == ResourceVector() and tr.task_id == "legal"
        assert tr.events[-1].payload["cause"]["error"] == "NoSpecialist"


def test_routed_trials_reserve_only_the_chosen_branch():
    spec = routing_spec(
        [TaskSpec("refund", ("payments",)), TaskSpec("crash", ("logs",))],
        [specialist("billing", "billing", ["payments"]), specialist("tech", "tech", ["logs"])],
        trials=40,
    )
    for tr in run_routing(spec):
        children = [cid for cid in tr.outcome if cid != "root"]
        assert len(children) == 1
        expected = "root/billing" if tr.task_id == "refund" else "root/tech"
        assert children == [expected]
        assert tr.conservation == [] and replay(tr.events).ok


# -- summary -----------------------------------------------------------------


def test_summary_single_trial_variance_undefined():
    s = summarize(run_iterative_refinement(iterative(trials=1)))
    assert s["CONTRACTED"]["tokens_variance"] is None


def test_summary_identical_traces_have_zero_variance():
    tr = run_iterative_refinement(iterative(trials=1))[0]
    s = summarize([tr, tr, tr])
    assert s["CONTRACTED"]["tokens_variance"] == 0


def test_summary_matches_statistics_module():
    import statistics

    traces = run_iterative_refinement(iterative(trials=30))
    s = summarize(traces)["CONTRACTED"]
    toks = [t.tokens for t in traces]
    assert s["tokens_mean"] == pytest.approx(statistics.fmean(toks))
    assert s["tokens_variance"] == pytest.approx(np.var(toks, ddof=1))
    assert s["success_rate"] == sum(t.success for t in traces) / 30


def test_summary_requires_traces():
    with pytest.raises(errors.EmptyTraces):
        summarize([])
