"""Monte Carlo execution and flat-file result persistence.

Runs are independent and deterministic given (root seed, run index), so they
can execute in parallel; aggregation always merges in run-index order and the
written files never include wall-clock data, which keeps a rerun of the same
configuration byte-identical.
"""

from __future__ import annotations

import json
import os
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import FgddfError
from .metrics import RobotSeries, aggregate
from .scenario import ScenarioConfig
from .simulate import RunResult, run_centralized, run_single


def worker_count() -> int:
    """Parallelism for Monte Carlo batches; FGDDF_WORKERS overrides."""
    raw = os.environ.get("FGDDF_WORKERS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            warnings.warn(f"ignoring non-integer FGDDF_WORKERS={raw!r}")
    return 1


@dataclass
class MonteCarloResult:
    """Completed runs in run-index order plus diagnostics for failed ones."""

    config: ScenarioConfig
    results: list[RunResult]
    failures: list[tuple[int, str]]

    @property
    def series(self) -> dict[int, RobotSeries]:
        return aggregate(self.results)


def _try_run(config: ScenarioConfig, run_idx: int, centralized: bool):
    try:
        fn = run_centralized if centralized else run_single
        return run_idx, fn(config, run_idx), None
    except FgddfError as exc:
        return run_idx, None, f"{type(exc).__name__}: {exc}"


def run_monte_carlo(
    config: ScenarioConfig,
    runs: int | None = None,
    centralized: bool = False,
    workers: int | None = None,
) -> MonteCarloResult:
    """Execute the configured number of runs, excluding failures with warnings."""
    n = config.mc_runs if runs is None else runs
    w = worker_count() if workers is None else max(1, workers)
    if w > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=w) as pool:
            outcomes = list(pool.map(_try_run, [config] * n, range(n), [centralized] * n))
    else:
        outcomes = [_try_run(config, i, centralized) for i in range(n)]
    outcomes.sort(key=lambda t: t[0])
    results = []
    failures = []
    for run_idx, result, problem in outcomes:
        if problem is None:
            results.append(result)
        else:
            failures.append((run_idx, problem))
            warnings.warn(f"run {run_idx} failed and was excluded: {problem}")
    if not results:
        raise FgddfError(f"all {n} runs failed; first: {failures[0][1]}")
    return MonteCarloResult(config=config, results=results, failures=failures)


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_csv_cell(c) for c in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_results(
    out_dir, mc: MonteCarloResult, baseline: MonteCarloResult | None = None
) -> None:
    """Persist manifest, per-robot metric CSVs, delivery log, and comm cost.

    The manifest carries everything needed to reproduce the batch (resolved
    configuration, seed, run indices, library versions) and nothing that
    varies between identical reruns.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = mc.config

    manifest = {
        "scenario": cfg.document,
        "name": cfg.name,
        "rule": cfg.rule,
        "delivery": cfg.delivery,
        "root_seed": cfg.seed,
        "runs_completed": [r.run_idx for r in mc.results],
        "runs_failed": [{"run": i, "error": why} for i, why in mc.failures],
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "fgddf": __version__,
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    def metric_rows(series: RobotSeries) -> list[list]:
        return [
            [
                k + 1,
                float(series.rmse[k]),
                float(series.two_sigma[k]),
                float(series.avg_nees[k]),
                series.nees_lo,
                series.nees_hi,
            ]
            for k in range(series.ticks)
        ]

    header = ["tick", "rmse", "two_sigma", "nees", "nees_lo", "nees_hi"]
    for rid, series in mc.series.items():
        _write_csv(out / f"metrics_{rid}.csv", header, metric_rows(series))
    if baseline is not None:
        for rid, series in baseline.series.items():
            _write_csv(out / f"metrics_centralized_{rid}.csv", header, metric_rows(series))

    first = mc.results[0]
    _write_csv(
        out / "delivery_log.csv",
        ["tick", "edge_i", "edge_j", "direction", "delivered", "scalars", "bytes"],
        [
            [
                rec.tick,
                rec.edge[0],
                rec.edge[1],
                f"{rec.sender}->{rec.receiver}",
                int(rec.delivered),
                rec.scalars,
                rec.bytes,
            ]
            for rec in first.records
        ],
    )

    comm = first.comm
    sent_by = {rid: 0 for rid in comm.scalars_by_robot}
    for rec in first.records:
        sent_by[rec.sender] = sent_by.get(rec.sender, 0) + 1
    per_msg = comm.homogeneous_scalars_per_message
    rows = []
    for rid in sorted(comm.scalars_by_robot):
        msgs = sent_by.get(rid, 0)
        scalars = comm.scalars_by_robot[rid]
        homog = msgs * per_msg
        rows.append([
            rid, msgs, scalars, comm.bytes_by_robot[rid], homog,
            1.0 - scalars / homog if homog else 0.0,
        ])
    rows.append([
        "all", comm.messages, comm.scalars_total,
        sum(comm.bytes_by_robot.values()),
        comm.homogeneous_scalars_total, comm.reduction,
    ])
    _write_csv(
        out / "comm_cost.csv",
        ["sender", "messages", "scalars", "bytes", "homogeneous_scalars", "reduction"],
        rows,
    )
