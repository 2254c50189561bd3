"""Budget delegation under conservation.

Parent budgets are split into child allocations plus a reserve using exact
integer arithmetic: every flooring remainder goes to the reserve, so a plan
always satisfies ``sum(children) + reserve == basis`` on each dimension of
the basis. Unused child budget flows back into a per-parent pool that active
siblings may draw from.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from . import errors
from .accounting import Ledger, open_ledger, refresh_violations
from .contract import Contract, ContractSpec, State, activate, draft_contract, with_budget
from .resources import ResourceVector, vsum
from .trace import AuditLog, EventKind, emit

PROPORTIONAL = "proportional"
EQUAL = "equal"
NEGOTIATED = "negotiated"
STRATEGIES = (PROPORTIONAL, EQUAL, NEGOTIATED)

DEFAULT_RESERVE_FRACTION = 0.10
DEFAULT_CAP_MULTIPLIER = 2


@dataclass(frozen=True)
class AllocationPlan:
    parent_id: str | None
    child_allocations: tuple[tuple[str, ResourceVector], ...]
    reserve: ResourceVector
    strategy: str
    basis: ResourceVector

    @property
    def allocated(self) -> ResourceVector:
        return vsum(b for _, b in self.child_allocations)

    @property
    def total(self) -> ResourceVector:
        return self.allocated + self.reserve

    def allocation(self, label: str) -> ResourceVector:
        for lbl, b in self.child_allocations:
            if lbl == label:
                return b
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "parent_id": self.parent_id,
            "strategy": self.strategy,
            "basis": self.basis.to_dict(),
            "reserve": self.reserve.to_dict(),
            "allocations": [[lbl, b.to_dict()] for lbl, b in self.child_allocations],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_labels(self, labels: Sequence[str], parent_id: str | None = None) -> "AllocationPlan":
        if len(labels) != len(self.child_allocations):
            raise ValueError("label count does not match allocation count")
        return AllocationPlan(
            parent_id if parent_id is not None else self.parent_id,
            tuple((lbl, b) for lbl, (_, b) in zip(labels, self.child_allocations)),
            self.reserve,
            self.strategy,
            self.basis,
        )


def _fraction(x: float | int | Fraction) -> Fraction:
    # str() keeps 0.29 as 29/100 rather than its binary expansion
    return x if isinstance(x, Fraction) else Fraction(str(x))


def _reserve_and_distributable(basis: ResourceVector, reserve_fraction: float) -> tuple[dict, dict]:
    rf = _fraction(reserve_fraction)
    if not (0 <= rf < 1):
        raise ValueError(f"reserve_fraction must be in [0, 1), got {reserve_fraction}")
    reserve = {d: math.floor(rf * q) for d, q in basis.items()}
    distributable = {d: q - reserve[d] for d, q in basis.items()}
    return reserve, distributable


def _default_labels(n: int) -> list[str]:
    return [f"child{j}" for j in range(n)]


def allocate_proportional(
    parent_budget: ResourceVector,
    weights: Sequence[float],
    reserve_fraction: float = DEFAULT_RESERVE_FRACTION,
    parent_id: str | None = None,
    labels: Sequence[str] | None = None,
    strategy: str = PROPORTIONAL,
) -> AllocationPlan:
    if not weights:
        raise errors.EmptyChildren("at least one child is required")
    ws = []
    for w in weights:
        if isinstance(w, bool) or not isinstance(w, (int, float, Fraction)) or not w > 0 or not math.isfinite(w):
            raise errors.NonPositiveWeight(f"weight {w!r}")
        ws.append(_fraction(w))
    basis = ResourceVector.coerce(parent_budget)
    reserve, dist = _reserve_and_distributable(basis, reserve_fraction)
    wsum = sum(ws)
    children = [{d: math.floor(w / wsum * dist[d]) for d in basis} for w in ws]
    for d in basis:
        reserve[d] += dist[d] - sum(c[d] for c in children)
    labels = list(labels) if labels is not None else _default_labels(len(ws))
    return AllocationPlan(
        parent_id,
        tuple((lbl, ResourceVector(c)) for lbl, c in zip(labels, children)),
        ResourceVector(reserve),
        strategy,
        basis,
    )


def allocate_equal(
    parent_budget: ResourceVector,
    n_children: int,
    reserve_fraction: float = DEFAULT_RESERVE_FRACTION,
    parent_id: str | None = None,
    labels: Sequence[str] | None = None,
) -> AllocationPlan:
    if n_children < 1:
        raise errors.EmptyChildren("n_children must be >= 1")
    return allocate_proportional(parent_budget, [1] * n_children, reserve_fraction, parent_id, labels, EQUAL)


def allocate_negotiated(
    parent_budget: ResourceVector,
    requests: Sequence[ResourceVector],
    reserve_fraction: float = DEFAULT_RESERVE_FRACTION,
    cap_multiplier: float = DEFAULT_CAP_MULTIPLIER,
    parent_id: str | None = None,
    labels: Sequence[str] | None = None,
) -> AllocationPlan:
    """Grant each request up to ``cap_multiplier`` times the equal share.

    If capped grants still exceed what is distributable on a dimension they are
    scaled down pro rata (floored). Whatever is not granted joins the reserve.
    Dimensions the parent does not bound are granted as requested.
    """
    if not requests:
        raise errors.EmptyChildren("at least one request is required")
    cm = _fraction(cap_multiplier)
    if cm < 1:
        raise errors.InvalidCapMultiplier(f"cap_multiplier={cap_multiplier} < 1")
    basis = ResourceVector.coerce(parent_budget)
    reqs = [ResourceVector.coerce(r) for r in requests]
    n = len(reqs)
    reserve, dist = _reserve_and_distributable(basis, reserve_fraction)
    grants: list[dict[str, int]] = [{} for _ in reqs]
    for d in basis:
        cap = math.floor(cm * (dist[d] // n))
        g = [min(r.get(d), cap) for r in reqs]
        total = sum(g)
        if total > dist[d]:
            g = [math.floor(Fraction(x * dist[d], total)) for x in g]
        for j, x in enumerate(g):
            grants[j][d] = x
        reserve[d] += dist[d] - sum(g)
    for j, r in enumerate(reqs):
        for d, q in r.items():
            if d not in basis:
                grants[j][d] = q
    labels = list(labels) if labels is not None else _default_labels(n)
    return AllocationPlan(
        parent_id,
        tuple((lbl, ResourceVector(g)) for lbl, g in zip(labels, grants)),
        ResourceVector(reserve),
        NEGOTIATED,
        basis,
    )


@dataclass(frozen=True)
class PoolDecision:
    granted: bool
    amount: ResourceVector
    available: ResourceVector


class BudgetPool:
    """Reserve plus returned budget of terminal children, drawable by active ones."""

    def __init__(self, parent_id: str | None, reserve: ResourceVector | None = None) -> None:
        self.parent_id = parent_id
        self.reserve0 = ResourceVector.coerce(reserve)
        self.available = self.reserve0
        self.returned_log: list[tuple[str, ResourceVector]] = []
        self.granted_log: list[tuple[str, ResourceVector]] = []
        self._lock = threading.Lock()

    def add_reserve(self, amount: ResourceVector, now: int = 0, log: AuditLog | None = None) -> None:
        with self._lock:
            self.reserve0 = self.reserve0 + amount
            self.available = self.available + amount
            emit(log, EventKind.POOL, self.parent_id or "", now, op="reserve", child_id=None,
                 amount=amount.to_dict(), available=self.available.to_dict())

    def released(self, child_id: str) -> bool:
        return any(cid == child_id for cid, _ in self.returned_log)

    def granted_to(self, child_id: str) -> ResourceVector:
        return vsum(a for cid, a in self.granted_log if cid == child_id)

    def replay(self) -> dict[str, int]:
        """Recompute availability from the logs alone (signed, so corruption shows)."""
        out = dict(self.reserve0.items())
        for _, a in self.returned_log:
            for d, q in a.items():
                out[d] = out.get(d, 0) + q
        for _, a in self.granted_log:
            for d, q in a.items():
                out[d] = out.get(d, 0) - q
        return out


def release_to_pool(
    pool: BudgetPool,
    child: Contract,
    child_ledger: Ledger | None,
    now: int = 0,
    log: AuditLog | None = None,
    consumed: ResourceVector | None = None,
) -> BudgetPool:
    """Return a terminal child's unused budget to its parent's pool.

    ``consumed`` overrides the child's own ledger; a child that delegated
    further passes its whole-subtree consumption so nothing is returned twice.
    """
    if not child.is_terminal:
        raise errors.NotTerminal(f"{child.contract_id} is {child.state.value}")
    if consumed is None:
        consumed = child_ledger.consumed if child_ledger is not None else ResourceVector()
    with pool._lock:
        if pool.released(child.contract_id):
            raise errors.AlreadyReleased(child.contract_id)
        # an overshot dimension returns 0, never a negative amount
        returned = child.budget.saturating_sub(consumed)
        pool.returned_log.append((child.contract_id, returned))
        pool.available = pool.available + returned
        emit(log, EventKind.POOL, pool.parent_id or "", now, op="release", child_id=child.contract_id,
             amount=returned.to_dict(), available=pool.available.to_dict())
    return pool


def request_from_pool(
    pool: BudgetPool, child: Contract, amount: ResourceVector, now: int = 0, log: AuditLog | None = None
) -> PoolDecision:
    """All-or-nothing top-up. On grant the child's budget is amended upward."""
    if child.state is not State.ACTIVE:
        raise errors.NotActive(f"{child.contract_id} is {child.state.value}")
    amount = ResourceVector.coerce(amount)
    with pool._lock:
        if not amount <= pool.available:
            emit(log, EventKind.POOL, pool.parent_id or "", now, op="deny", child_id=child.contract_id,
                 amount=amount.to_dict(), available=pool.available.to_dict())
            return PoolDecision(False, amount, pool.available)
        if amount.is_zero():
            return PoolDecision(True, amount, pool.available)
        pool.available = pool.available - amount
        pool.granted_log.append((child.contract_id, amount))
        child.budget = child.budget + amount
        emit(log, EventKind.POOL, pool.parent_id or "", now, op="grant", child_id=child.contract_id,
             amount=amount.to_dict(), available=pool.available.to_dict())
        emit(log, EventKind.AMENDMENT, child.contract_id, now, amount=amount.to_dict(),
             budget=child.budget.to_dict())
        return PoolDecision(True, amount, pool.available)


@dataclass
class Node:
    contract: Contract
    ledger: Ledger | None = None
    children: list[str] = field(default_factory=list)
    plans: list[AllocationPlan] = field(default_factory=list)
    allocation: ResourceVector | None = None

    @property
    def consumed(self) -> ResourceVector:
        return self.ledger.consumed if self.ledger is not None else ResourceVector()

    @property
    def committed(self) -> ResourceVector:
        return vsum(p.total for p in self.plans)


@dataclass(frozen=True)
class ConservationFinding:
    node: str
    dimension: str
    lhs: int
    rhs: int
    check: str

    def to_dict(self) -> dict:
        return {"node": self.node, "dimension": self.dimension, "lhs": self.lhs, "rhs": self.rhs, "check": self.check}


class DelegationTree:
    """Registry of contracts, their ledgers, plans and pools, keyed by contract id."""

    def __init__(self, log: AuditLog | None = None) -> None:
        self.nodes: dict[str, Node] = {}
        self.pools: dict[str, BudgetPool] = {}
        self.root_ids: list[str] = []
        self.log = log

    # -- registry ------------------------------------------------------------

    def __contains__(self, contract_id: str) -> bool:
        return contract_id in self.nodes

    def node(self, contract_id: str) -> Node:
        try:
            return self.nodes[contract_id]
        except KeyError:
            raise errors.UnknownContract(contract_id) from None

    def contract(self, contract_id: str) -> Contract:
        return self.node(contract_id).contract

    def ledger(self, contract_id: str) -> Ledger:
        led = self.node(contract_id).ledger
        if led is None:
            raise errors.NotActivated(contract_id)
        return led

    def add(self, contract: Contract) -> Contract:
        if contract.contract_id in self.nodes:
            raise errors.InvalidSpec(f"duplicate contract id {contract.contract_id!r}")
        if contract.parent_id is not None:
            self.node(contract.parent_id).children.append(contract.contract_id)
        else:
            self.root_ids.append(contract.contract_id)
        self.nodes[contract.contract_id] = Node(contract)
        return contract

    def draft(self, spec: ContractSpec, now: int = 0) -> Contract:
        if spec.parent_id is not None and spec.parent_id not in self.nodes:
            raise errors.UnknownContract(spec.parent_id)
        return self.add(draft_contract(spec, now, self.log))

    def children(self, contract_id: str) -> list[Contract]:
        return [self.nodes[c].contract for c in self.node(contract_id).children]

    def descendants(self, contract_id: str) -> list[str]:
        out, stack = [], list(self.node(contract_id).children)
        while stack:
            cid = stack.pop()
            out.append(cid)
            stack.extend(self.nodes[cid].children)
        return out

    # -- budget views --------------------------------------------------------

    def remaining(self, contract_id: str) -> ResourceVector:
        """Headroom on each bounded dimension: budget - own consumption - committed plans."""
        node = self.node(contract_id)
        used = node.consumed + node.committed
        return node.contract.budget.saturating_sub(used)

    def remaining_time(self, contract_id: str, now: int) -> int:
        c = self.contract(contract_id)
        if c.temporal.t_start is None:
            return c.temporal.tau_ms
        return c.temporal.tau_ms - (now - c.temporal.t_start)

    def subtree_consumption(self, contract_id: str) -> ResourceVector:
        return vsum(self.nodes[c].consumed for c in [contract_id, *self.descendants(contract_id)])

    def resources_available(self, contract_id: str) -> bool:
        node = self.node(contract_id)
        c = node.contract
        if c.parent_id is None:
            return True
        parent = self.node(c.parent_id)
        if parent.contract.state is not State.ACTIVE:
            return False
        if node.allocation is not None:
            granted = self.pools[c.parent_id].granted_to(contract_id) if c.parent_id in self.pools else ResourceVector()
            if c.budget == node.allocation + granted:
                # budget was set aside when the plan was drafted
                return True
        return c.budget.le_bounded(self.remaining(c.parent_id))

    # -- lifecycle -----------------------------------------------------------

    def activate(self, contract_id: str, now: int) -> Ledger:
        node = self.node(contract_id)
        activate(node.contract, now, self.resources_available(contract_id), self.log)
        node.ledger = open_ledger(node.contract)
        return node.ledger

    def draft_subcontracts(
        self, parent_id: str, plan: AllocationPlan, child_specs: Sequence[ContractSpec], now: int = 0
    ) -> list[Contract]:
        """Draft one child per plan allocation. Nothing is registered on failure."""
        parent = self.node(parent_id).contract
        if parent.state is not State.ACTIVE:
            raise errors.ParentNotActive(f"{parent_id} is {parent.state.value}")
        if plan.parent_id != parent_id:
            raise errors.ConservationViolation(f"plan belongs to {plan.parent_id!r}, not {parent_id!r}")
        if len(child_specs) != len(plan.child_allocations):
            raise errors.InvalidSpec("child_specs and plan allocations differ in length")
        if not child_specs:
            return []

        headroom = self.remaining(parent_id)
        total = plan.total
        over = [d for d in parent.budget if total.get(d) > headroom.get(d)]
        if over:
            d = over[0]
            raise errors.ConservationViolation(
                f"plan needs {total.get(d)} {d} but {parent_id} has {headroom.get(d)} remaining"
            )
        time_left = self.remaining_time(parent_id, now)
        specs = []
        for spec, (label, b) in zip(child_specs, plan.child_allocations):
            if spec.tau_ms > time_left:
                raise errors.TemporalOverrun(f"{spec.contract_id}: tau {spec.tau_ms} > parent remaining {time_left}")
            if spec.contract_id in self.nodes:
                raise errors.InvalidSpec(f"duplicate contract id {spec.contract_id!r}")
            specs.append(with_budget(spec, b, parent_id))
        if len({s.contract_id for s in specs}) != len(specs):
            raise errors.InvalidSpec("duplicate child contract ids")
        for s in specs:
            draft_contract(s)  # dry run: validation errors surface before anything is registered

        emit(self.log, EventKind.ALLOCATION, parent_id, now, digest=plan.digest(), **plan.to_dict())
        children = []
        for s, (_, b) in zip(specs, plan.child_allocations):
            child = self.add(draft_contract(s, now, self.log))
            self.nodes[child.contract_id].allocation = b
            children.append(child)
        self.node(parent_id).plans.append(plan)
        pool = self.pools.get(parent_id)
        if pool is None:
            pool = self.pools[parent_id] = BudgetPool(parent_id)
        pool.add_reserve(plan.reserve, now, self.log)
        return children

    def release(self, child_id: str, now: int = 0) -> BudgetPool:
        node = self.node(child_id)
        parent_id = node.contract.parent_id
        if parent_id is None or parent_id not in self.pools:
            raise errors.UnknownContract(f"{child_id} has no parent pool")
        pending = [d for d in self.descendants(child_id) if not self.nodes[d].contract.is_terminal]
        if pending:
            raise errors.NotTerminal(f"{child_id} has non-terminal descendants: {sorted(pending)}")
        return release_to_pool(self.pools[parent_id], node.contract, node.ledger, now, self.log,
                               consumed=self.subtree_consumption(child_id))

    def request_top_up(self, child_id: str, amount: ResourceVector, now: int = 0) -> PoolDecision:
        node = self.node(child_id)
        parent_id = node.contract.parent_id
        if parent_id is None or parent_id not in self.pools:
            raise errors.UnknownContract(f"{child_id} has no parent pool")
        decision = request_from_pool(self.pools[parent_id], node.contract, amount, now, self.log)
        if decision.granted and node.ledger is not None:
            refresh_violations(node.ledger)
        return decision

    def verify(self, now: int = 0) -> list[ConservationFinding]:
        findings = verify_conservation(self)
        emit(self.log, EventKind.CONSERVATION_CHECK, self.root_ids[0] if self.root_ids else "", now,
             ok=not findings, violations=[f.to_dict() for f in findings])
        return findings


def verify_conservation(tree: DelegationTree) -> list[ConservationFinding]:
    """Audit every node of the tree. An empty list means the tree conserves.

    Checks, per node with delegated children:
      plan_sum          sum(children) + reserve == basis for each plan
      node_commitment   own consumption + committed plans <= node budget
      child_allocation  child budget - pool top-ups == its plan allocation
      pool_identity     available == reserve + returned - granted, and >= 0
      subtree_consumption  consumption of the node and its descendants <= node budget
    and per root:
      system_consumption  consumption over the whole tree <= root budget
    """
    out: list[ConservationFinding] = []
    for cid in sorted(tree.nodes):
        node = tree.nodes[cid]
        budget = node.contract.budget
        for plan in node.plans:
            total = plan.total
            for d in plan.basis:
                if total.get(d) != plan.basis[d]:
                    out.append(ConservationFinding(cid, d, total.get(d), plan.basis[d], "plan_sum"))
        if node.plans:
            used = node.consumed + node.committed
            for d in sorted(budget):
                if used.get(d) > budget[d]:
                    out.append(ConservationFinding(cid, d, used.get(d), budget[d], "node_commitment"))
            if node.contract.parent_id is not None:
                sub = tree.subtree_consumption(cid)
                for d in sorted(budget):
                    if sub.get(d) > budget[d]:
                        out.append(ConservationFinding(cid, d, sub.get(d), budget[d], "subtree_consumption"))
        pool = tree.pools.get(cid)
        if pool is not None:
            expected = pool.replay()
            for d in sorted(set(expected) | set(pool.available)):
                if pool.available.get(d) != expected.get(d, 0) or expected.get(d, 0) < 0:
                    out.append(ConservationFinding(cid, d, pool.available.get(d), expected.get(d, 0), "pool_identity"))
        for child_id in node.children:
            child = tree.nodes[child_id]
            if child.allocation is None:
                continue
            granted = pool.granted_to(child_id) if pool is not None else ResourceVector()
            actual = child.contract.budget
            for d in sorted(set(actual) | set(child.allocation)):
                lhs = actual.get(d) - granted.get(d)
                if lhs != child.allocation.get(d):
                    out.append(ConservationFinding(child_id, d, lhs, child.allocation.get(d), "child_allocation"))
    for rid in tree.root_ids:
        total = tree.subtree_consumption(rid)
        for d, b in sorted(tree.nodes[rid].contract.budget.items()):
            if total.get(d) > b:
                out.append(ConservationFinding(rid, d, total.get(d), b, "system_consumption"))
    return out
