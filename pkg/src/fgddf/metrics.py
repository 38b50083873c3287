"""Consistency metrics over Monte Carlo runs: RMSE, 2-sigma, and NEES.

All series are per robot per tick, averaged across runs. Error vectors are
expected to already have angle residuals wrapped (the simulation layer does
this when it records them).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import SingularCovariance
from .simulate import RunResult


def nees(error: np.ndarray, cov: np.ndarray) -> float:
    """Normalized estimation error squared for one estimate."""
    err = np.asarray(error, dtype=float)
    try:
        sol = np.linalg.solve(cov, err)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"covariance not invertible: {exc}") from None
    return float(err @ sol)


def nees_bounds(dim: int, runs: int, level: float = 0.95) -> tuple[float, float]:
    """Two-sided chi-square bounds on the run-averaged NEES.

    The sum of `runs` independent NEES values of a consistent n-dimensional
    estimator is chi-square with runs*n degrees of freedom, so the average
    lies in [chi2(a/2), chi2(1-a/2)] / runs with the stated coverage.
    """
    alpha = 1.0 - level
    dof = runs * dim
    return (
        float(chi2.ppf(alpha / 2, dof) / runs),
        float(chi2.ppf(1 - alpha / 2, dof) / runs),
    )


@dataclass(frozen=True)
class RobotSeries:
    """Aggregated consistency series for one robot."""

    robot_id: int
    dim: int
    rmse: np.ndarray
    two_sigma: np.ndarray
    avg_nees: np.ndarray
    nees_lo: float
    nees_hi: float

    @property
    def ticks(self) -> int:
        return len(self.rmse)

    @property
    def nees_in_bounds(self) -> float:
        """Fraction of ticks whose run-averaged NEES sits inside the bounds."""
        ok = (self.avg_nees >= self.nees_lo) & (self.avg_nees <= self.nees_hi)
        return float(np.mean(ok))

    @property
    def rmse_within_two_sigma(self) -> float:
        return float(np.mean(self.rmse <= self.two_sigma))


def robot_series(results: list[RunResult], robot_id: int, level: float = 0.95) -> RobotSeries:
    """Fold the per-run stats of one robot into RMSE / 2-sigma / NEES series."""
    if not results:
        raise ValueError("no runs to aggregate")
    dim = sum(v.dim for v in results[0].slots[robot_id])
    sq = np.array([[s.error @ s.error / dim for s in r.stats[robot_id]] for r in results])
    sig = np.array(
        [[2.0 * np.sqrt(np.trace(s.cov) / dim) for s in r.stats[robot_id]] for r in results]
    )
    eps = np.array([[nees(s.error, s.cov) for s in r.stats[robot_id]] for r in results])
    lo, hi = nees_bounds(dim, len(results), level)
    return RobotSeries(
        robot_id=robot_id,
        dim=dim,
        rmse=np.sqrt(sq.mean(axis=0)),
        two_sigma=sig.mean(axis=0),
        avg_nees=eps.mean(axis=0),
        nees_lo=lo,
        nees_hi=hi,
    )


def aggregate(results: list[RunResult], level: float = 0.95) -> dict[int, RobotSeries]:
    """Per-robot series over a batch of runs of the same scenario."""
    return {rid: robot_series(results, rid, level) for rid in sorted(results[0].stats)}
