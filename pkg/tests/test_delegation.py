import pytest
from hypothesis import given
from hypothesis import strategies as st

from contract_engine import errors
from contract_engine.accounting import record_consumption
from contract_engine.contract import State, terminate
from contract_engine.delegation import (
    BudgetPool,
    DelegationTree,
    allocate_equal,
    allocate_negotiated,
    allocate_proportional,
    release_to_pool,
    request_from_pool,
    verify_conservation,
)
from contract_engine.resources import ResourceVector as RV
from contract_engine.trace import AuditLog, EventKind

from conftest import active_contract, make_spec


def tokens(plan):
    return [b.get("token") for _, b in plan.child_allocations]


# -- allocation --------------------------------------------------------------


def test_proportional_example():
    p = allocate_proportional(RV(token=100000), [2, 1, 1], 0.10)
    assert tokens(p) == [45000, 22500, 22500] and p.reserve == RV(token=10000)


def test_proportional_single_child_gets_everything():
    p = allocate_proportional(RV(token=777, api_call=3), [5], 0)
    assert p.child_allocations[0][1] == RV(token=777, api_call=3) and p.reserve == RV()


def test_flooring_remainder_goes_to_reserve():
    p = allocate_proportional(RV(token=101), [1, 1], 0)
    assert tokens(p) == [50, 50] and p.reserve == RV(token=1)


def test_proportional_rejects_bad_weights():
    with pytest.raises(errors.EmptyChildren):
        allocate_proportional(RV(token=1), [], 0)
    with pytest.raises(errors.NonPositiveWeight):
        allocate_proportional(RV(token=1), [1, 0], 0)


def test_equal_examples():
    assert tokens(allocate_equal(RV(token=90000), 3, 0)) == [30000] * 3
    p = allocate_equal(RV(token=100000), 3, 0.10)
    assert tokens(p) == [30000] * 3 and p.reserve == RV(token=10000)
    assert tokens(allocate_equal(RV(token=5), 1, 0)) == [5]
    with pytest.raises(errors.EmptyChildren):
        allocate_equal(RV(token=5), 0, 0)


def test_negotiated_cap_binds():
    p = allocate_negotiated(RV(token=100000), [RV(token=80000), RV(token=10000), RV(token=10000)], 0.10, 2)
    assert tokens(p) == [60000, 10000, 10000]
    # 10000 up-front reserve plus the 10000 nobody was granted
    assert p.reserve == RV(token=20000)


def test_negotiated_slack_caps_grant_requests():
    reqs = [RV(token=100), RV(token=200), RV(token=300)]
    p = allocate_negotiated(RV(token=9000), reqs, 0, 2)
    assert tokens(p) == [100, 200, 300] and p.reserve == RV(token=8400)


def test_negotiated_scales_down_when_oversubscribed():
    # cap = 2 * floor(90/3) = 60 per child; capped grants 60+60+60 > 90
    p = allocate_negotiated(RV(token=90), [RV(token=100)] * 3, 0, 2)
    assert tokens(p) == [30, 30, 30] and p.total == p.basis


def test_negotiated_rejects_small_multiplier():
    with pytest.raises(errors.InvalidCapMultiplier):
        allocate_negotiated(RV(token=10), [RV(token=1)], 0, 0.5)


budgets = st.dictionaries(st.sampled_from(["token", "api_call", "web_search"]), st.integers(0, 10**7), min_size=1)
fractions = st.floats(0, 0.99, allow_nan=False)


@given(budgets, st.lists(st.floats(0.01, 100), min_size=1, max_size=8), fractions)
def test_proportional_conserves_exactly(b, ws, rf):
    p = allocate_proportional(RV(b), ws, rf)
    for d, q in b.items():
        assert sum(x.get(d) for _, x in p.child_allocations) + p.reserve.get(d) == q


@given(budgets, st.integers(1, 12), fractions)
def test_equal_conserves_exactly(b, n, rf):
    p = allocate_equal(RV(b), n, rf)
    assert all(p.total.get(d) == q for d, q in b.items())
    assert len({x for x in tokens(p)}) <= 1


@given(budgets, st.lists(st.integers(0, 10**7), min_size=1, max_size=6), fractions, st.floats(1, 5))
def test_negotiated_conserves_exactly(b, reqs, rf, cm):
    requests = [RV({d: r for d in b}) for r in reqs]
    p = allocate_negotiated(RV(b), requests, rf, cm)
    for d, q in b.items():
        assert p.total.get(d) == q
        for (_, g), r in zip(p.child_allocations, requests):
            assert 0 <= g.get(d) <= r.get(d)


# -- pool --------------------------------------------------------------------


def terminal_child(budget, consumed):
    c = active_contract(contract_id="child", budget=budget)
    from contract_engine.accounting import open_ledger

    led = open_ledger(c)
    record_consumption(led, consumed)
    terminate(c, 1, "done")
    return c, led


def test_release_returns_unused():
    pool = BudgetPool("p")
    c, led = terminal_child({"token": 30000}, {"token": 22000})
    assert release_to_pool(pool, c, led).available == RV(token=8000)


def test_release_exact_budget_returns_zero():
    c, led = terminal_child({"token": 30000}, {"token": 30000})
    assert release_to_pool(BudgetPool("p"), c, led).available == RV()


def test_release_of_overshoot_is_clamped():
    c, led = terminal_child({"token": 40000}, {"token": 56000})
    pool = release_to_pool(BudgetPool("p"), c, led)
    assert pool.available.get("token") == 0 and pool.replay() == {"token": 0}


def test_release_guards():
    pool = BudgetPool("p")
    with pytest.raises(errors.NotTerminal):
        release_to_pool(pool, active_contract(), None)
    c, led = terminal_child({"token": 5}, {"token": 1})
    release_to_pool(pool, c, led)
    with pytest.raises(errors.AlreadyReleased):
        release_to_pool(pool, c, led)


def test_request_grant_amends_budget():
    log = AuditLog()
    pool = BudgetPool("p", RV(token=8000))
    child = active_contract(contract_id="k", budget={"token": 100})
    d = request_from_pool(pool, child, RV(token=5000), 3, log)
    assert d.granted and pool.available == RV(token=3000) and child.budget == RV(token=5100)
    kinds = [e.kind for e in log]
    assert kinds == [EventKind.POOL, EventKind.AMENDMENT]


def test_request_over_pool_is_denied_unchanged():
    pool = BudgetPool("p", RV(token=8000))
    child = active_contract(contract_id="k", budget={"token": 100})
    d = request_from_pool(pool, child, RV(token=9000))
    assert not d.granted and pool.available == RV(token=8000) and child.budget == RV(token=100)


def test_zero_request_is_noop_grant():
    pool = BudgetPool("p", RV(token=8))
    child = active_contract(contract_id="k")
    d = request_from_pool(pool, child, RV())
    assert d.granted and pool.available == RV(token=8) and not pool.granted_log


def test_request_needs_active_child():
    child = active_contract(contract_id="k")
    terminate(child, 1, "x")
    with pytest.raises(errors.NotActive):
        request_from_pool(BudgetPool("p"), child, RV(token=1))


# -- tree --------------------------------------------------------------------


def pipeline(log=None, budget=100000):
    tree = DelegationTree(log)
    tree.draft(make_spec("root", {"token": budget}), 0)
    tree.activate("root", 0)
    return tree


def test_draft_subcontracts_from_proportional_plan():
    tree = pipeline()
    plan = allocate_proportional(RV(token=100000), [2, 1, 1], 0.10, "root", ["a", "b", "c"])
    kids = tree.draft_subcontracts("root", plan, [make_spec(x, tau_ms=1000) for x in "abc"])
    assert [k.state for k in kids] == [State.DRAFTED] * 3
    assert sum(k.budget.get("token") for k in kids) == 90000
    assert all(k.parent_id == "root" for k in kids)
    assert tree.pools["root"].available == RV(token=10000)


def test_draft_against_remaining_is_all_or_nothing():
    tree = pipeline()
    record_consumption(tree.ledger("root"), {"token": 95000})
    plan = allocate_equal(RV(token=10000), 2, 0, "root", ["a", "b"])
    with pytest.raises(errors.ConservationViolation):
        tree.draft_subcontracts("root", plan, [make_spec("a"), make_spec("b")])
    assert set(tree.nodes) == {"root"} and not tree.node("root").plans


def test_draft_empty_plan():
    from contract_engine.delegation import AllocationPlan

    tree = pipeline()
    plan = AllocationPlan("root", (), RV(), "equal", RV())
    assert tree.draft_subcontracts("root", plan, []) == []


def test_draft_rejects_child_outliving_parent():
    tree = pipeline()
    plan = allocate_equal(RV(token=10), 1, 0, "root", ["a"])
    with pytest.raises(errors.TemporalOverrun):
        tree.draft_subcontracts("root", plan, [make_spec("a", tau_ms=10**9)])
    assert "a" not in tree


def test_draft_needs_active_parent():
    tree = DelegationTree()
    tree.draft(make_spec("root"), 0)
    plan = allocate_equal(RV(token=10), 1, 0, "root", ["a"])
    with pytest.raises(errors.ParentNotActive):
        tree.draft_subcontracts("root", plan, [make_spec("a")])


def test_child_larger_than_parent_is_unavailable():
    tree = pipeline(budget=10)
    tree.draft(make_spec("kid", {"token": 11}, parent_id="root"), 0)
    with pytest.raises(errors.ResourcesUnavailable):
        tree.activate("kid", 0)


def run_children(tree, used):
    plan = allocate_proportional(tree.remaining("root"), [2, 1, 1], 0.10, "root", ["a", "b", "c"])
    tree.draft_subcontracts("root", plan, [make_spec(x, tau_ms=1000) for x in "abc"])
    for cid, u in zip("abc", used):
        tree.activate(cid, 0)
        record_consumption(tree.ledger(cid), {"token": u})
        terminate(tree.contract(cid), 1, "done")
        tree.release(cid, 1)


def test_pipeline_conserves():
    tree = pipeline()
    run_children(tree, [40000, 20000, 1000])
    assert verify_conservation(tree) == []
    assert tree.pools["root"].available == RV(token=10000 + 5000 + 2500 + 21500)


def test_single_node_is_vacuously_ok():
    assert verify_conservation(pipeline()) == []


def test_inflated_child_budget_is_named():
    tree = pipeline()
    run_children(tree, [1, 1, 1])
    tree.contract("b").budget = RV(token=999999)
    findings = verify_conservation(tree)
    assert any(f.node == "b" and f.dimension == "token" and f.check == "child_allocation" for f in findings)


def test_overshoot_beyond_reserve_breaks_system_consumption():
    tree = pipeline()
    run_children(tree, [45000 + 20000, 22500, 22500])
    findings = verify_conservation(tree)
    assert [(f.node, f.check) for f in findings] == [("root", "system_consumption")]
    assert findings[0].lhs == 110000 and findings[0].rhs == 100000


def test_nested_release_returns_subtree_unused_once():
    tree = pipeline(budget=1000)
    plan = allocate_equal(RV(token=1000), 1, 0, "root", ["mid"])
    tree.draft_subcontracts("root", plan, [make_spec("mid", tau_ms=1000)])
    tree.activate("mid", 0)
    sub = allocate_equal(tree.remaining("mid"), 1, 0, "mid", ["leaf"])
    tree.draft_subcontracts("mid", sub, [make_spec("leaf", tau_ms=500)])
    tree.activate("leaf", 0)
    record_consumption(tree.ledger("leaf"), {"token": 600})
    terminate(tree.contract("leaf"), 1, "done")
    tree.release("leaf", 1)
    terminate(tree.contract("mid"), 2, "done")
    tree.release("mid", 2)
    # the leaf's 600 must not be handed back to root a second time
    assert tree.pools["root"].available == RV(token=400)
    assert verify_conservation(tree) == []


def test_release_waits_for_descendants():
    tree = pipeline(budget=100)
    tree.draft_subcontracts("root", allocate_equal(RV(token=100), 1, 0, "root", ["mid"]), [make_spec("mid", tau_ms=9)])
    tree.activate("mid", 0)
    tree.draft_subcontracts("mid", allocate_equal(RV(token=100), 1, 0, "mid", ["leaf"]), [make_spec("leaf", tau_ms=5)])
    tree.activate("leaf", 0)
    terminate(tree.contract("mid"), 1, "early")
    with pytest.raises(errors.NotTerminal):
        tree.release("mid", 1)


def test_top_up_through_tree_refreshes_violation_state():
    tree = pipeline()
    run = allocate_equal(RV(token=1000), 1, 0.5, "root", ["a"])
    tree.draft_subcontracts("root", run, [make_spec("a", tau_ms=1000)])
    led = tree.activate("a", 0)
    record_consumption(led, {"token": 500})
    assert led.violated == {"token"}
    assert tree.request_top_up("a", RV(token=100)).granted
    assert led.violated == set() and verify_conservation(tree) == []


ops = st.lists(st.tuples(st.sampled_from(["release", "request"]), st.integers(0, 5000), st.integers(0, 5000)),
               max_size=40)


@given(st.integers(0, 10000), ops)
def test_pool_identity_against_log_replay(reserve, seq):
    pool = BudgetPool("p", RV(token=reserve))
    for k, (op, a, b) in enumerate(seq):
        if op == "release":
            c, led = terminal_child({"token": a}, {"token": min(b, 10**6)})
            c.contract_id = f"c{k}"
            release_to_pool(pool, c, led)
        else:
            child = active_contract(contract_id=f"r{k}")
            request_from_pool(pool, child, RV(token=a))
        assert pool.available.get("token") >= 0
        assert pool.replay() == {"token": pool.available.get("token")}
