"""Command line front door: ``run``, ``compare`` and ``verify``.

Exit codes: 0 completed, 2 conservation violation or replay inconsistency
found, 3 configuration or I/O error. Set ``CONTRACT_ENGINE_LOG`` to a level
name (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Sequence

from . import errors
from .config import load_scenario
from .replay import verify_trace_dir
from .runner import EXIT_CONFIG, EXIT_CONSERVATION, EXIT_OK, compare, run

LOG_ENV = "CONTRACT_ENGINE_LOG"

log = logging.getLogger("contract_engine")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contract-engine", description="Run and audit resource-bounded agent contracts.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write traces plus report.json")
    r.add_argument("--scenario", required=True, help="scenario JSON path or bundled name (e.g. code_review)")
    r.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
    r.add_argument("--trials", type=_positive, default=None, help="override the trial count")
    r.add_argument("--condition", choices=["contracted", "uncontracted"], default=None)
    r.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("compare", help="compare two run reports (a vs baseline b)")
    c.add_argument("report_a")
    c.add_argument("report_b")

    v = sub.add_parser("verify", help="replay a trace directory through the bookkeeping oracle")
    v.add_argument("trace_dir")
    return p


def configure_logging() -> None:
    level_name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _cmd_run(args: argparse.Namespace) -> int:
    spec = load_scenario(args.scenario)
    report = run(spec, seed=args.seed, out_dir=args.out, trials=args.trials, condition=args.condition)
    for key, g in report.summary.items():
        var = "n/a" if g["tokens_variance"] is None else f"{g['tokens_variance']:.1f}"
        print(
            f"{report.scenario} {key}: trials={g['trials']} tokens_mean={g['tokens_mean']:.1f} "
            f"variance={var} success={g['success_rate']:.3f} timeouts={g['timeout_rate']:.3f}"
        )
    cons = report.conservation
    if cons["checked"]:
        print(f"conservation: {cons['ok']}/{cons['checked']} trials clean, {cons['violations']} finding(s)")
    print(f"wrote {report.trials} trace file(s) and report.json to {args.out}")
    return report.exit_code


def _cmd_compare(args: argparse.Namespace) -> int:
    sys.stdout.write(compare(args.report_a, args.report_b))
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    verdicts = verify_trace_dir(args.trace_dir)
    if not verdicts:
        raise errors.IoError(f"no trace files in {args.trace_dir}")
    bad = 0
    for v in verdicts:
        if v.findings or v.conservation_violations:
            bad += 1
            print(f"FAIL {v.path}: {len(v.findings)} replay finding(s), {v.conservation_violations} conservation")
            for f in v.findings[:5]:
                print(f"  {f}")
    print(f"verified {len(verdicts)} trace file(s): {len(verdicts) - bad} ok, {bad} with findings")
    return EXIT_CONSERVATION if bad else EXIT_OK


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "verify": _cmd_verify}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        return COMMANDS[args.command](args)
    except errors.Mismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (errors.ParseError, errors.ValidationError, errors.IoError, errors.InvalidSpec, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
