"""Fuzz budget conservation over random delegation trees and replay every trace."""

from __future__ import annotations

import argparse
import time

from contract_engine.replay import replay
from contract_engine.sim.fuzz import random_tree
from contract_engine.trace import AuditLog


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trees", type=int, default=1000)
    p.add_argument("--start-seed", type=int, default=0)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--max-fanout", type=int, default=5)
    args = p.parse_args()

    t0 = time.perf_counter()
    nodes = top_ups = failures = 0
    for seed in range(args.start_seed, args.start_seed + args.trees):
        log = AuditLog()
        res = random_tree(seed, args.max_depth, args.max_fanout, log)
        nodes += res.nodes
        top_ups += res.top_ups
        problems = [str(f) for f in res.findings]
        if not res.plans_exact:
            problems.append("allocation plan does not sum to its basis")
        problems += replay(log.events).findings
        if problems:
            failures += 1
            print(f"seed {seed}:")
            for line in problems[:5]:
                print(f"  {line}")
    elapsed = time.perf_counter() - t0
    print(f"{args.trees} trees, {nodes} nodes, {top_ups} top-ups, {failures} failing trees, {elapsed:.1f}s")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
