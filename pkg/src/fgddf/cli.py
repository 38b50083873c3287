"""Command-line entry points: run scenarios, validate configs, compare results.

Exit codes: 0 on success, 1 for configuration problems, 2 for runtime
failures (including Monte Carlo batches where any run had to be excluded).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, FgddfError
from .harness import run_monte_carlo, write_results
from .scenario import load_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgddf",
        description="Heterogeneous decentralized data fusion simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario's Monte Carlo batch")
    run.add_argument("--scenario", required=True, help="scenario file (path or packaged name)")
    run.add_argument("--fusion", choices=["hs-cf", "hs-ci"], help="override fusion rule")
    run.add_argument("--dropout", type=float, metavar="P",
                     help="override delivery probability (0..1)")
    run.add_argument("--mc", type=int, metavar="N", help="override Monte Carlo run count")
    run.add_argument("--seed", type=int, metavar="U64", help="override root seed")
    run.add_argument("--out", metavar="DIR", help="directory for result files")
    run.add_argument("--centralized", action="store_true",
                     help="also run the centralized baseline and emit its metrics")
    run.add_argument("--dot", metavar="FILE",
                     help="write a run-0 final belief factor graph in DOT form")

    val = sub.add_parser("validate", help="check a scenario file and report problems")
    val.add_argument("--scenario", required=True)

    cmp_ = sub.add_parser("compare", help="tabulate metric deltas between two result dirs")
    cmp_.add_argument("--a", required=True, metavar="DIR")
    cmp_.add_argument("--b", required=True, metavar="DIR")
    return parser


def _cmd_run(args) -> int:
    try:
        config = load_scenario(args.scenario).with_overrides(
            rule=args.fusion, delivery=args.dropout, mc_runs=args.mc, seed=args.seed
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        mc = run_monte_carlo(config)
        baseline = run_monte_carlo(config, centralized=True) if args.centralized else None
    except FgddfError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if args.out:
        write_results(args.out, mc, baseline)
    if args.dot:
        from .simulate import final_belief_graphs

        Path(args.dot).write_text(final_belief_graphs(config), encoding="utf-8")

    for rid, series in mc.series.items():
        print(
            f"robot {rid}: rmse<=2sigma {series.rmse_within_two_sigma:.0%}, "
            f"nees in bounds {series.nees_in_bounds:.0%} "
            f"[{series.nees_lo:.2f}, {series.nees_hi:.2f}]"
        )
    comm = mc.results[0].comm
    if comm.messages:
        print(
            f"communication: {comm.messages} messages, {comm.scalars_total} scalars "
            f"({comm.reduction:.1%} below the homogeneous reference)"
        )
    if mc.failures:
        print(f"{len(mc.failures)} of {config.mc_runs} runs excluded", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        config = load_scenario(args.scenario)
    except ConfigError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    alloc = config.allocation()
    print(
        f"{config.name}: {len(config.robots)} robots, {len(config.targets)} targets, "
        f"{len(config.topology.edges)} edges, global dimension {config.global_dimension()}, "
        f"rule {config.rule}, delivery {config.delivery}"
    )
    for rid in sorted(alloc.robots):
        dim = sum(v.dim for v in alloc.robots[rid])
        print(f"  robot {rid}: {len(alloc.robots[rid])} blocks, {dim} states")
    return EXIT_OK


def _load_metrics(path: Path) -> dict[str, list[dict]]:
    out = {}
    for f in sorted(path.glob("metrics_*.csv")):
        header, *rows = f.read_text(encoding="utf-8").strip().split("\n")
        cols = header.split(",")
        out[f.stem.removeprefix("metrics_")] = [
            dict(zip(cols, (float(x) for x in row.split(",")))) for row in rows
        ]
    return out


def _cmd_compare(args) -> int:
    a_dir, b_dir = Path(args.a), Path(args.b)
    for d in (a_dir, b_dir):
        if not (d / "manifest.json").exists():
            print(f"config error: {d} has no manifest.json", file=sys.stderr)
            return EXIT_CONFIG
    a, b = _load_metrics(a_dir), _load_metrics(b_dir)
    shared = sorted(set(a) & set(b))
    if not shared:
        print("config error: no common metrics files", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{'robot':>10} {'d_rmse':>12} {'d_two_sigma':>12} {'d_nees':>12}")
    for key in shared:
        ticks = min(len(a[key]), len(b[key]))
        deltas = {
            col: sum(b[key][k][col] - a[key][k][col] for k in range(ticks)) / ticks
            for col in ("rmse", "two_sigma", "nees")
        }
        print(
            f"{key:>10} {deltas['rmse']:>12.4f} {deltas['two_sigma']:>12.4f} "
            f"{deltas['nees']:>12.4f}"
        )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; bad flags are a config problem
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_compare(args)


if __name__ == "__main__":
    sys.exit(main())
