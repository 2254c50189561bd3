"""Random delegation trees for conservation fuzzing.

Each tree is built top-down: a node activates, consumes part of its
headroom, maybe delegates to 1..fanout children with a random strategy and
reserve fraction, runs the children (who may top up from the pool), then
consumes some more and terminates. Every draw is capped at the node's
remaining budget, the condition under which conservation must hold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..accounting import record_consumption
from ..contract import ContractSpec, InputSpec, OutputSpec, SuccessCriteria, terminate
from ..delegation import (
    EQUAL,
    NEGOTIATED,
    PROPORTIONAL,
    AllocationPlan,
    ConservationFinding,
    DelegationTree,
    allocate_equal,
    allocate_negotiated,
    allocate_proportional,
)
from ..resources import API_CALL, LLM_CALL, TOKEN, WEB_SEARCH, ResourceVector
from ..trace import AuditLog

FUZZ_DIMENSIONS = (TOKEN, API_CALL, WEB_SEARCH)
MAX_RESERVE_FRACTION = 0.15


@dataclass
class FuzzResult:
    tree: DelegationTree
    findings: list[ConservationFinding]
    plans: list[AllocationPlan]
    nodes: int
    top_ups: int

    @property
    def plans_exact(self) -> bool:
        """Sum of allocations plus reserve equals the basis on every dimension."""
        return all(p.total.get(d) == q for p in self.plans for d, q in p.basis.items())


def _spec(cid: str, budget: ResourceVector, tau: int, parent: str | None) -> ContractSpec:
    return ContractSpec(
        contract_id=cid,
        input=InputSpec("task"),
        output=OutputSpec("result"),
        skills=(),
        budget=budget,
        tau_ms=tau,
        success=SuccessCriteria.build([("done", 1.0)], 1.0),
        parent_id=parent,
    )


class _Builder:
    def __init__(self, rng: np.random.Generator, max_depth: int, max_fanout: int, log: AuditLog | None) -> None:
        self.rng = rng
        self.max_depth = max_depth
        self.max_fanout = max_fanout
        self.tree = DelegationTree(log)
        self.now = 0
        self.top_ups = 0

    def consume(self, cid: str, fraction: float) -> None:
        """Record a draw of up to ``fraction`` of the current headroom."""
        tree = self.tree
        left = tree.remaining(cid)
        delta = {d: int(self.rng.integers(0, int(q * fraction) + 1)) for d, q in left.items()}
        delta[LLM_CALL] = 1  # unbounded dimension rides along
        self.now += int(self.rng.integers(0, 5))
        record_consumption(tree.ledger(cid), delta, now=self.now, log=tree.log)

    def plan(self, cid: str, n: int) -> AllocationPlan:
        rng = self.rng
        basis = self.tree.remaining(cid)
        rf = float(rng.uniform(0.0, MAX_RESERVE_FRACTION))
        labels = [f"{cid}.{j}" for j in range(n)]
        strategy = (PROPORTIONAL, EQUAL, NEGOTIATED)[int(rng.integers(3))]
        if strategy == PROPORTIONAL:
            weights = [float(w) for w in rng.uniform(0.1, 5.0, size=n)]
            return allocate_proportional(basis, weights, rf, cid, labels)
        if strategy == EQUAL:
            return allocate_equal(basis, n, rf, cid, labels)
        requests = [
            ResourceVector({d: int(rng.integers(0, 2 * q // n + 2)) for d, q in basis.items()}) for _ in range(n)
        ]
        cm = float(rng.uniform(1.0, 3.0))
        return allocate_negotiated(basis, requests, rf, cm, cid, labels)

    def run_node(self, cid: str, depth: int) -> None:
        rng, tree = self.rng, self.tree
        tree.activate(cid, self.now)
        self.consume(cid, float(rng.uniform(0, 0.3)))
        if depth < self.max_depth and rng.random() < 0.7:
            n = int(rng.integers(1, self.max_fanout + 1))
            plan = self.plan(cid, n)
            tau = max(tree.remaining_time(cid, self.now) // 2, 1)
            specs = [_spec(lbl, b, tau, cid) for lbl, b in plan.child_allocations]
            tree.draft_subcontracts(cid, plan, specs, self.now)
            for lbl, _ in plan.child_allocations:
                self.run_node(lbl, depth + 1)
        if tree.contract(cid).parent_id is not None and rng.random() < 0.3:
            self.maybe_top_up(cid)
        self.consume(cid, float(rng.uniform(0, 1.0)))
        terminate(tree.contract(cid), self.now, "fuzz", tree.log)
        if tree.contract(cid).parent_id is not None:
            tree.release(cid, self.now)

    def maybe_top_up(self, cid: str) -> None:
        parent = self.tree.contract(cid).parent_id
        pool = self.tree.pools[parent]
        # sometimes ask for more than is available to exercise denial
        amount = {d: int(self.rng.integers(0, q + 2)) for d, q in pool.available.items()}
        if self.tree.request_top_up(cid, ResourceVector(amount), self.now).granted:
            self.top_ups += 1


def random_tree(
    seed: int | np.random.Generator,
    max_depth: int = 4,
    max_fanout: int = 5,
    log: AuditLog | None = None,
) -> FuzzResult:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    b = _Builder(rng, max_depth, max_fanout, log)
    dims = [d for d in FUZZ_DIMENSIONS if rng.random() < 0.7] or [TOKEN]
    budget = ResourceVector({d: int(rng.integers(0, 1_000_000)) for d in dims})
    b.tree.draft(_spec("root", budget, 1_000_000, None), 0)
    # root is depth 1: depth <= max_depth counts levels including the root
    b.run_node("root", 1)
    plans = [p for n in b.tree.nodes.values() for p in n.plans]
    return FuzzResult(b.tree, b.tree.verify(b.now), plans, len(b.tree.nodes), b.top_ups)
