import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from contract_engine import errors
from contract_engine.accounting import (
    TokenBreakdown,
    check_thresholds,
    controllable_budget,
    fired_alert_keys,
    format_budget_status,
    monitor,
    open_ledger,
    record_consumption,
)
from contract_engine.contract import draft_contract, terminate
from contract_engine.resources import ResourceVector
from contract_engine.trace import AuditLog, EventKind

from conftest import active_contract, make_spec


def ledger_for(budget, tau_ms=100_000, now=0):
    c = active_contract(budget=budget, tau_ms=tau_ms, now=now)
    return c, open_ledger(c)


# -- recording ---------------------------------------------------------------


def test_overshooting_call_is_accepted_then_flagged():
    _, led = ledger_for({"token": 40000})
    record_consumption(led, {"token": 30000})
    res = record_consumption(led, {"token": 26000})
    assert res.snapshot == ResourceVector(token=56000)
    assert res.newly_violated == {"token"}


def test_zero_delta_is_identity():
    _, led = ledger_for({"token": 10})
    record_consumption(led, {"token": 3})
    res = record_consumption(led, {})
    assert res.snapshot == ResourceVector(token=3) and not res.newly_violated


def test_iteration_violation_on_third_tick():
    _, led = ledger_for({"iteration": 3})
    got = [record_consumption(led, {"iteration": 1}).newly_violated for _ in range(3)]
    assert got == [frozenset(), frozenset(), frozenset({"iteration"})]


def test_recording_after_terminal_is_rejected_and_atomic():
    c, led = ledger_for({"token": 10})
    record_consumption(led, {"token": 4})
    terminate(c, 1, "stop")
    with pytest.raises(errors.ContractNotActive):
        record_consumption(led, {"token": 1})
    assert led.consumed == ResourceVector(token=4)


def test_negative_delta_and_token_mismatch():
    _, led = ledger_for({"token": 10})
    with pytest.raises(errors.NegativeDelta):
        record_consumption(led, {"token": -1})
    with pytest.raises(errors.TokenMismatch):
        record_consumption(led, {"token": 5}, TokenBreakdown(1, 1, 1))
    assert led.consumed == ResourceVector()


def test_token_detail_and_skill_counts():
    log = AuditLog()
    _, led = ledger_for({"token": 1000})
    record_consumption(led, {"token": 6}, TokenBreakdown(1, 2, 3), "search", now=5, log=log)
    record_consumption(led, {"token": 4}, None, ["search", "fetch"], now=6, log=log)
    assert led.token_detail == TokenBreakdown(1, 2, 7)  # unattributed tokens count as output
    assert led.per_skill_calls == {"search": 2, "fetch": 1}
    ev = log.of_kind(EventKind.CONSUMPTION)
    assert [e.payload["ledger_seq"] for e in ev] == [1, 2]
    assert ev[1].payload["snapshot"] == {"token": 10}


def test_open_ledger_needs_activation():
    with pytest.raises(errors.NotActivated):
        open_ledger(draft_contract(make_spec()))


# -- controllable budget -----------------------------------------------------


def test_controllable_budget():
    assert controllable_budget(50000, 12000) == (38000, False)
    assert controllable_budget(50000, 0) == (50000, False)
    assert controllable_budget(50000, 50000) == (0, True)
    assert controllable_budget(50000, 60000) == (0, True)


# -- monitor -----------------------------------------------------------------


def test_monitor_takes_most_constrained():
    c, led = ledger_for({"token": 100, "api_call": 10}, tau_ms=100_000)
    record_consumption(led, {"token": 50, "api_call": 9})
    r = monitor(c, led, 40_000)
    assert r.utilization == {"token": 0.5, "api_call": 0.9}
    assert r.tau_util == 0.4 and r.aggregate == 0.9


def test_monitor_at_start_is_zero():
    c, led = ledger_for({"token": 100})
    r = monitor(c, led, 0)
    assert r.aggregate == 0 and r.utilization == {"token": 0.0}


def test_monitor_reports_overshoot_ratio():
    c, led = ledger_for({"token": 40000})
    record_consumption(led, {"token": 56000})
    r = monitor(c, led, 0)
    assert r.utilization["token"] == 1.4 and r.aggregate >= 1


def test_monitor_zero_budget_sentinels():
    c, led = ledger_for({"token": 100, "web_search": 0, "api_call": 0})
    record_consumption(led, {"web_search": 1})
    r = monitor(c, led, 0)
    assert math.isinf(r.utilization["web_search"]) and r.utilization["api_call"] == 0.0


def test_duration_ratio_not_clamped():
    c, led = ledger_for({"token": 100}, tau_ms=1000)
    assert monitor(c, led, 2500).tau_util == 2.5


# -- alerts ------------------------------------------------------------------


def test_alert_fires_once_on_crossing():
    log = AuditLog()
    c, led = ledger_for({"token": 100})
    record_consumption(led, {"token": 70})
    assert check_thresholds(led, monitor(c, led, 0), [0.8], 0, log) == []
    record_consumption(led, {"token": 15})
    fired = check_thresholds(led, monitor(c, led, 0), [0.8], 0, log)
    assert fired_alert_keys(fired) == {(0.8, "token")}
    assert check_thresholds(led, monitor(c, led, 0), [0.8], 0, log) == []
    assert len(log.of_kind(EventKind.ALERT)) == 1


def test_jump_fires_both_thresholds_in_order():
    c, led = ledger_for({"token": 100})
    record_consumption(led, {"token": 40})
    check_thresholds(led, monitor(c, led, 0), [0.5, 0.8])
    record_consumption(led, {"token": 50})
    fired = check_thresholds(led, monitor(c, led, 0), [0.5, 0.8])
    assert [(a.threshold, a.dimension) for a in fired] == [(0.5, "token"), (0.8, "token")]


def test_duration_alert():
    c, led = ledger_for({"token": 100}, tau_ms=1000)
    fired = check_thresholds(led, monitor(c, led, 850), [0.8])
    assert fired_alert_keys(fired) == {(0.8, "duration")}


@pytest.mark.parametrize("bad", [[0.8, 0.5], [0.5, 0.5], [0.0], [1.2], [-0.1]])
def test_thresholds_must_be_increasing_in_unit_interval(bad):
    c, led = ledger_for({"token": 100})
    with pytest.raises(errors.UnsortedThresholds):
        check_thresholds(led, monitor(c, led, 0), bad)


# -- budget status -----------------------------------------------------------


@pytest.mark.parametrize(
    "consumed,budget,expected",
    [(3461, 50000, "Budget: 3461/50000"), (0, 1, "Budget: 0/1"), (56000, 40000, "Budget: 56000/40000")],
)
def test_budget_status_golden(consumed, budget, expected):
    assert format_budget_status(consumed, budget, "token") == expected


def test_budget_status_no_separators_or_padding():
    s = format_budget_status(1234567, 10000000)
    assert s == "Budget: 1234567/10000000" and s.encode("utf-8") == b"Budget: 1234567/10000000"


# -- properties --------------------------------------------------------------

deltas = st.lists(
    st.tuples(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 3)), max_size=30
)


@given(deltas)
def test_ledger_monotone_and_token_consistent(calls):
    c, led = ledger_for({"token": 10**9, "api_call": 10**6})
    prev = ResourceVector()
    for i, r, o, a in calls:
        snap = record_consumption(led, {"token": i + r + o, "api_call": a}, TokenBreakdown(i, r, o)).snapshot
        assert all(snap.get(d) >= prev.get(d) for d in set(snap) | set(prev))
        assert led.token_detail.total == led.consumed.get("token")
        prev = snap


@given(st.lists(st.integers(0, 40), max_size=20), st.integers(0, 200))
def test_violated_set_matches_definition(steps, b):
    _, led = ledger_for({"token": b})
    total = 0
    for s in steps:
        record_consumption(led, {"token": s})
        total += s
        expect = {"token"} if (b > 0 and total >= b) or (b == 0 and total > 0) else set()
        assert led.violated == expect
