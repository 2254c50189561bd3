"""Bookkeeping oracle: rebuild ledgers, budgets and pools from a trace alone.

The replay deliberately uses plain dicts and integer arithmetic instead of
the engine's ledger and pool classes, so that agreement between the two is
evidence rather than tautology.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import errors
from .trace import TERMINAL_KINDS, EventKind, TraceEvent, read_jsonl


def _add(a: dict[str, int], b: dict[str, int], sign: int = 1) -> dict[str, int]:
    out = dict(a)
    for d, q in b.items():
        out[d] = out.get(d, 0) + sign * int(q)
    return {d: q for d, q in out.items() if q != 0}


def _violated(budget: dict[str, int], consumed: dict[str, int]) -> set[str]:
    out = set()
    for d, b in budget.items():
        c = consumed.get(d, 0)
        if (b == 0 and c > 0) or (b > 0 and c >= b):
            out.add(d)
    return out


@dataclass
class ReplayState:
    consumed: dict[str, dict[str, int]] = field(default_factory=dict)
    budgets: dict[str, dict[str, int]] = field(default_factory=dict)
    parents: dict[str, str | None] = field(default_factory=dict)
    states: dict[str, str] = field(default_factory=dict)
    pools: dict[str, dict[str, int]] = field(default_factory=dict)
    released: dict[str, set[str]] = field(default_factory=dict)
    alerts: dict[str, set[tuple[float, str]]] = field(default_factory=dict)
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


def replay(events: Sequence[TraceEvent]) -> ReplayState:
    """Replay one trial's events. Inconsistencies are collected, not raised."""
    st = ReplayState()
    bad = st.findings.append
    last_seq, last_t = 0, None
    terminal_count: Counter[str] = Counter()

    for ev in events:
        where = f"seq {ev.seq} ({ev.kind.value} {ev.contract_id})"
        if ev.seq <= last_seq:
            bad(f"{where}: sequence not strictly increasing after {last_seq}")
        if last_t is not None and ev.logical_time_ms < last_t:
            bad(f"{where}: logical time went backwards")
        last_seq, last_t = ev.seq, ev.logical_time_ms
        cid, p = ev.contract_id, ev.payload

        if ev.kind is EventKind.DRAFTED:
            if cid in st.states:
                bad(f"{where}: contract drafted twice")
            st.states[cid] = "DRAFTED"
            st.budgets[cid] = dict(p.get("budget", {}))
            st.parents[cid] = p.get("parent_id")
            st.consumed[cid] = {}
        elif ev.kind is EventKind.ACTIVE:
            if st.states.get(cid) != "DRAFTED":
                bad(f"{where}: activation from state {st.states.get(cid)}")
            st.states[cid] = "ACTIVE"
        elif ev.kind is EventKind.CONSUMPTION:
            if st.states.get(cid) != "ACTIVE":
                bad(f"{where}: consumption recorded in state {st.states.get(cid)}")
            before = _violated(st.budgets.get(cid, {}), st.consumed.get(cid, {}))
            st.consumed[cid] = _add(st.consumed.get(cid, {}), p.get("delta", {}))
            if any(q < 0 for q in st.consumed[cid].values()):
                bad(f"{where}: negative consumption")
            if st.consumed[cid] != {d: q for d, q in p.get("snapshot", {}).items() if q}:
                bad(f"{where}: snapshot {p.get('snapshot')} != replayed {st.consumed[cid]}")
            newly = sorted(_violated(st.budgets.get(cid, {}), st.consumed[cid]) - before)
            if newly != sorted(p.get("newly_violated", [])):
                bad(f"{where}: newly_violated {p.get('newly_violated')} != replayed {newly}")
            detail = p.get("token_detail")
            if detail is not None and sum(detail.values()) != p.get("delta", {}).get("token", 0):
                bad(f"{where}: token_detail does not sum to token delta")
        elif ev.kind is EventKind.ALERT:
            key = (float(p["threshold"]), str(p["dimension"]))
            fired = st.alerts.setdefault(cid, set())
            if key in fired:
                bad(f"{where}: alert {key} fired twice")
            fired.add(key)
        elif ev.kind is EventKind.ALLOCATION:
            basis = p.get("basis", {})
            total = dict(p.get("reserve", {}))
            for _, b in p.get("allocations", []):
                total = _add(total, b)
            for d in basis:
                if total.get(d, 0) != basis[d]:
                    bad(f"{where}: allocations + reserve = {total.get(d, 0)} {d}, basis {basis[d]}")
        elif ev.kind is EventKind.POOL:
            _replay_pool(st, ev, where)
        elif ev.kind is EventKind.AMENDMENT:
            # keys are kept even at zero: a zero budget forbids, an absent one does not bound
            budget = dict(st.budgets.get(cid, {}))
            for d, q in p.get("amount", {}).items():
                budget[d] = budget.get(d, 0) + int(q)
            st.budgets[cid] = budget
            if budget != p.get("budget", {}):
                bad(f"{where}: amended budget {p.get('budget')} != replayed {st.budgets[cid]}")
        elif ev.kind in TERMINAL_KINDS:
            terminal_count[cid] += 1
            if terminal_count[cid] > 1:
                bad(f"{where}: second terminal transition")
            elif st.states.get(cid) != "ACTIVE":
                bad(f"{where}: terminal transition from {st.states.get(cid)}")
            st.states[cid] = ev.kind.value
        elif ev.kind is EventKind.CONSERVATION_CHECK:
            mine = _system_findings(st)
            if p.get("ok") and mine:
                bad(f"{where}: trace claims conservation ok but replay finds {mine}")
    return st


def _replay_pool(st: ReplayState, ev: TraceEvent, where: str) -> None:
    pid, p = ev.contract_id, ev.payload
    op, child, amount = p.get("op"), p.get("child_id"), dict(p.get("amount", {}))
    pool = st.pools.setdefault(pid, {})
    bad = st.findings.append
    if op == "reserve":
        pool = _add(pool, amount)
    elif op == "release":
        if child in st.released.setdefault(pid, set()):
            bad(f"{where}: {child} released twice")
        st.released[pid].add(child)
        if st.states.get(child) in (None, "DRAFTED", "ACTIVE"):
            bad(f"{where}: release of non-terminal {child}")
        budget, used = st.budgets.get(child, {}), _subtree_consumed(st, child)
        expected = {d: max(b - used.get(d, 0), 0) for d, b in budget.items()}
        expected = {d: q for d, q in expected.items() if q}
        if expected != {d: q for d, q in amount.items() if q}:
            bad(f"{where}: released {amount}, replay expects {expected}")
        pool = _add(pool, amount)
    elif op == "grant":
        if any(q > pool.get(d, 0) for d, q in amount.items()):
            bad(f"{where}: grant {amount} exceeds available {pool}")
        pool = _add(pool, amount, -1)
    elif op == "deny":
        if all(q <= pool.get(d, 0) for d, q in amount.items()):
            bad(f"{where}: denied {amount} although {pool} was available")
    else:
        bad(f"{where}: unknown pool op {op!r}")
    if any(q < 0 for q in pool.values()):
        bad(f"{where}: pool went negative {pool}")
    reported = {d: q for d, q in p.get("available", {}).items() if q}
    if reported != {d: q for d, q in pool.items() if q}:
        bad(f"{where}: pool reports {reported}, replay has {pool}")
    st.pools[pid] = pool


def _subtree_consumed(st: ReplayState, root: str) -> dict[str, int]:
    total: dict[str, int] = {}
    stack = [root]
    while stack:
        cid = stack.pop()
        total = _add(total, st.consumed.get(cid, {}))
        stack.extend(c for c, parent in st.parents.items() if parent == cid)
    return total


def _system_findings(st: ReplayState) -> list[str]:
    """Whole-tree consumption against each root's budget."""
    out = []
    for root in [c for c, parent in st.parents.items() if parent is None]:
        total = _subtree_consumed(st, root)
        for d, b in st.budgets.get(root, {}).items():
            if total.get(d, 0) > b:
                out.append(f"{root}: subtree {d} {total[d]} > {b}")
    return out


@dataclass(frozen=True)
class FileVerdict:
    path: str
    events: int
    findings: tuple[str, ...]
    conservation_violations: int


def verify_trace_dir(trace_dir: str | Path) -> list[FileVerdict]:
    """Replay every ``*.jsonl`` file in a directory."""
    root = Path(trace_dir)
    if not root.is_dir():
        raise errors.IoError(f"not a directory: {root}")
    out = []
    for path in sorted(root.glob("*.jsonl")):
        try:
            events = read_jsonl(path)
        except ValueError as exc:
            raise errors.ParseError(str(exc)) from exc
        st = replay(events)
        cons = sum(len(e.payload.get("violations", [])) for e in events if e.kind is EventKind.CONSERVATION_CHECK)
        out.append(FileVerdict(str(path), len(events), tuple(st.findings), cons))
    return out


def replay_pool_ops(reserve: dict[str, int], ops: Iterable[tuple[str, dict[str, int]]]) -> dict[str, int]:
    """Brute-force pool availability from (op, amount) pairs: release adds, grant subtracts."""
    avail = dict(reserve)
    for op, amount in ops:
        avail = _add(avail, amount, 1 if op in ("reserve", "release") else -1)
    return avail
