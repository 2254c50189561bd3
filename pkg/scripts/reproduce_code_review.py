"""Run the bundled code_review scenario under both conditions and print the comparison table."""

from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from contract_engine.config import load_scenario
from contract_engine.runner import compare, run


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", type=Path, default=None, help="keep traces here (default: temporary directory)")
    args = p.parse_args()

    spec = load_scenario("code_review")
    with tempfile.TemporaryDirectory() as tmp:
        out = args.out or Path(tmp)
        c = run(spec, seed=args.seed, trials=args.trials, condition="contracted", out_dir=out / "contracted")
        u = run(spec, seed=args.seed, trials=args.trials, condition="uncontracted", out_dir=out / "uncontracted")
        print(f"code_review, {args.trials} trials per condition, seed {args.seed}\n")
        print(compare(out / "contracted", out / "uncontracted"))
        for rep in (c, u):
            g = next(iter(rep.summary.values()))
            print(f"{rep.condition:>12}: outcomes {g['outcomes']}")


if __name__ == "__main__":
    main()
