"""Regenerate the pinned golden traces under tests/golden/.

Only run this after an intentional change to the trace format or the
simulator's draw order; the golden test exists to catch unintentional ones.
"""

from __future__ import annotations

import argparse
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path

from contract_engine.config import load_scenario
from contract_engine.runner import run

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"

# (scenario, condition, trials); all at seed 42
CASES = (
    ("code_review", "contracted", 2),
    ("code_review", "uncontracted", 1),
    ("research_pipeline", "contracted", 1),
    ("support_routing", "contracted", 2),
)


def golden_name(scenario: str, condition: str, trial_file: str) -> str:
    return f"{scenario}_{condition}_{trial_file}"


def generate(dest: Path) -> list[Path]:
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for scenario, condition, trials in CASES:
        with tempfile.TemporaryDirectory() as tmp:
            run(load_scenario(scenario), seed=42, out_dir=tmp, trials=trials, condition=condition)
            for f in sorted(Path(tmp).glob("*.jsonl")):
                target = dest / golden_name(scenario, condition, f.name)
                shutil.copyfile(f, target)
                written.append(target)
    return written


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dest", type=Path, default=GOLDEN)
    args = p.parse_args()
    for path in generate(args.dest):
        print(path)


if __name__ == "__main__":
    main()
