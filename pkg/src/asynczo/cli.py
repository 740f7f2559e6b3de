"""Command line entry point: ``asynczo run | verify | schedule``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .core import AsyncZOError
from .experiment import ExperimentConfig, load_config, run_experiment
from .scheduler import theorem1_schedule
from .verify import SELECTORS, run_verification_suite


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asynczo", description="Asynchronous zeroth-order optimization simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a multi-trial experiment and write CSV traces")
    run.add_argument("--config", type=Path, help="INI experiment file; defaults reproduce the 5-agent benchmark")
    run.add_argument("--seed", type=int, help="base seed (overrides run.seed)")
    run.add_argument("--jobs", type=int, default=1, help="trials executed concurrently")
    run.add_argument("--out", type=Path, help="output directory (overrides output.path)")
    run.add_argument("--record-every", type=int, help="trace cadence in queries (overrides run.record_every)")

    ver = sub.add_parser("verify", help="run property checks")
    ver.add_argument("selector", choices=SELECTORS + ("all",), nargs="?", default="all")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", type=Path, help="directory for report.txt")
    ver.add_argument("--l1-scale", type=float, default=1.0, help="multiply the smoothness constant (negative control: 0.5)")
    ver.add_argument("--quick", action="store_true", help="smaller sample sizes")

    sch = sub.add_parser("schedule", help="print the step size and smoothing parameter for a horizon T")
    sch.add_argument("--L0", type=float, required=True)
    sch.add_argument("--n-bar", type=int, required=True)
    sch.add_argument("--p-min", type=float, required=True)
    sch.add_argument("--T", type=int, required=True)
    sch.add_argument("--variant", choices=("statement", "proof"), default="statement")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise AsyncZOError("--seed: must be an unsigned 64-bit integer")
        overrides["seed"] = args.seed
    if args.record_every is not None:
        overrides["record_every"] = args.record_every
    if args.out is not None:
        overrides["output"] = str(args.out)
    cfg = replace(cfg, **overrides).validate()
    if args.jobs < 1:
        raise AsyncZOError("--jobs: must be >= 1")
    result = run_experiment(cfg, jobs=args.jobs)
    sys.stdout.write((result.out_dir / "report.txt").read_text())
    return 0


def _cmd_verify(args) -> int:
    results = run_verification_suite(args.selector, seed=args.seed, l1_scale=args.l1_scale, quick=args.quick)
    text = "".join(r.render() for r in results)
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text)
    return 0 if all(r.passed for r in results) else 1


def _cmd_schedule(args) -> int:
    alpha, mu = theorem1_schedule(args.L0, args.n_bar, args.p_min, args.T, args.variant)
    print(f"alpha = {alpha!r}")
    print(f"mu = {mu!r}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return {"run": _cmd_run, "verify": _cmd_verify, "schedule": _cmd_schedule}[args.command](args)
    except AsyncZOError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
