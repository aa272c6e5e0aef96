"""Command-line entry point: ``ncolab run | summarize | fixtures``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .harness import PROFILES, RunPlan, run_plan, summarize_dir
from .scenarios import (
    SCENARIO_ALIASES,
    SETTING_ALIASES,
    dumps_spec,
    fixture_name,
    fixture_names,
    load_fixture,
    load_spec,
    builtin_spec,
)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress per replication")
    parser = argparse.ArgumentParser(prog="ncolab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a simulation study")
    run.add_argument("--scenario", choices=sorted(SCENARIO_ALIASES), default="hte")
    run.add_argument("--setting", choices=sorted(SETTING_ALIASES), default="primary")
    run.add_argument("--config", type=Path, help="TOML scenario file; overrides --scenario/--setting")
    run.add_argument("--reps", type=int, default=500)
    run.add_argument("--first-rep", type=int, default=0,
                     help="index of the first replication, for splitting a study across runs")
    run.add_argument("--seed", type=int, default=None, help="master seed (default: the scenario's own)")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--profile", choices=sorted(PROFILES), default="full")
    run.add_argument("--trees", type=int, default=None, help="causal-forest size (overrides the profile)")
    run.add_argument("--oracle-plugin-coefs", action="store_true",
                     help="use the generating coefficients for the oracle instead of refitting")

    summ = sub.add_parser("summarize", parents=[common], help="rebuild summary files from replications.csv")
    summ.add_argument("--in", dest="indir", type=Path, required=True)

    fx = sub.add_parser("fixtures", parents=[common], help="shipped scenario files")
    fx.add_argument("action", choices=["list", "show"])
    fx.add_argument("name", nargs="?")
    return parser


def _run(args) -> int:
    if args.config is not None:
        spec = load_spec(args.config)
    else:
        spec = load_fixture(fixture_name(SCENARIO_ALIASES[args.scenario], SETTING_ALIASES[args.setting]))
    models = PROFILES[args.profile]
    if args.trees is not None:
        models = dataclasses.replace(models, cf_trees=args.trees)
    models = dataclasses.replace(models, oracle_plugin=args.oracle_plugin_coefs)
    plan = RunPlan(
        specs=(spec,),
        replications=args.reps,
        output_dir=args.out,
        threads=args.threads,
        master_seed=args.seed,
        models=models,
        first_rep=args.first_rep,
    )
    summary = run_plan(plan)
    for key, cell in sorted(summary.cells.items()):
        print(f"{'/'.join(key):<50} ATE {cell.ate.median: .4f} ({cell.ate.lo: .4f}, {cell.ate.hi: .4f})")
    for key in summary.missing:
        print(f"missing cell: {'/'.join(key)}", file=sys.stderr)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "run":
        return _run(args)
    if args.command == "summarize":
        summary = summarize_dir(args.indir)
        print(f"wrote summary for {len(summary.cells)} cells to {args.indir}")
        return 0
    if args.action == "list":
        for name in fixture_names():
            print(name)
        return 0
    if args.name is None:
        print("fixtures show needs a name", file=sys.stderr)
        return 2
    if args.name not in fixture_names():
        print(f"unknown fixture {args.name!r}; see `ncolab fixtures list`", file=sys.stderr)
        return 2
    print(dumps_spec(load_fixture(args.name)), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
