"""Run the strategy_modes scenario and print the per-mode gradient."""

from __future__ import annotations

import argparse

from contract_engine.config import load_scenario
from contract_engine.runner import run


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args()

    rep = run(load_scenario("strategy_modes"), seed=args.seed, trials=args.trials)
    print(f"{'Mode':<12}{'Success':>9}{'Reasoning':>11}{'Tokens':>9}{'Timeouts':>10}")
    for key, g in rep.summary.items():
        mode = key.split(":", 1)[-1]
        print(f"{mode:<12}{g['success_rate']:>9.1%}{g['reasoning_tokens_mean']:>11.0f}"
              f"{g['tokens_mean']:>9.0f}{g['timeout_rate']:>10.1%}")


if __name__ == "__main__":
    main()
