"""NEES, chi-square bounds, and run aggregation against independent oracles."""

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import gammainc

from fgddf.errors import SingularCovariance
from fgddf.metrics import aggregate, nees, nees_bounds, robot_series
from fgddf.simulate import RunResult, TickStats
from fgddf.variables import VariableId, VariableKind

from conftest import random_spd


def chi2_quantile_oracle(q: float, dof: float) -> float:
    """Invert the regularized lower incomplete gamma, independent of chi2.ppf."""
    return brentq(lambda x: gammainc(dof / 2.0, x / 2.0) - q, 1e-12, 10.0 * dof + 100.0)


def synthetic_results(rng, runs, ticks, dim, cov_scale=1.0):
    """Runs whose errors are truly drawn from the claimed covariance."""
    slot = VariableId(VariableKind.TARGET_STATE, 1, 0, dim)
    out = []
    for idx in range(runs):
        stats = []
        for _ in range(ticks):
            p = random_spd(rng, dim)
            e = rng.multivariate_normal(np.zeros(dim), p)
            stats.append(TickStats(error=e, cov=cov_scale * p))
        out.append(
            RunResult(
                scenario="synthetic", run_idx=idx, rule="hs-cf", delivery=1.0,
                steps=ticks, slots={1: (slot,)}, stats={1: stats}, records=[],
                fallbacks=0, comm=None, wall_clock=0.0,
            )
        )
    return out


class TestNees:
    def test_hand_value(self):
        e = np.array([1.0, 2.0])
        p = np.diag([4.0, 1.0])
        assert nees(e, p) == pytest.approx(0.25 + 4.0)

    def test_invariant_under_whitening(self, rng):
        for _ in range(50):
            p = random_spd(rng, 3)
            e = rng.normal(size=3)
            l = np.linalg.cholesky(p)
            w = np.linalg.solve(l, e)
            assert nees(e, p) == pytest.approx(w @ w, rel=1e-10)

    def test_singular_covariance_raises(self):
        with pytest.raises(SingularCovariance):
            nees(np.ones(2), np.zeros((2, 2)))

    def test_mean_matches_dimension(self, rng):
        """Consistent estimator: sample mean of NEES approaches the dimension."""
        dim, trials = 4, 10_000
        p = random_spd(rng, dim)
        es = rng.multivariate_normal(np.zeros(dim), p, size=trials)
        vals = [nees(e, p) for e in es]
        assert np.mean(vals) == pytest.approx(dim, rel=0.02)


class TestNeesBounds:
    def test_against_gamma_inversion(self):
        for dim, runs in ((7, 50), (2, 10), (14, 10), (1, 1)):
            lo, hi = nees_bounds(dim, runs)
            assert lo == pytest.approx(chi2_quantile_oracle(0.025, runs * dim) / runs, abs=1e-6)
            assert hi == pytest.approx(chi2_quantile_oracle(0.975, runs * dim) / runs, abs=1e-6)

    def test_bounds_bracket_dimension(self):
        lo, hi = nees_bounds(6, 25)
        assert lo < 6 < hi

    def test_bounds_tighten_with_more_runs(self):
        lo1, hi1 = nees_bounds(4, 5)
        lo2, hi2 = nees_bounds(4, 500)
        assert hi2 - lo2 < hi1 - lo1
        assert lo1 < lo2 and hi2 < hi1

    def test_level_widens_bounds(self):
        lo95, hi95 = nees_bounds(4, 10, level=0.95)
        lo99, hi99 = nees_bounds(4, 10, level=0.99)
        assert lo99 < lo95 and hi95 < hi99


class TestRobotSeries:
    def test_consistent_estimator_sits_in_bounds(self, rng):
        results = synthetic_results(rng, runs=40, ticks=60, dim=3)
        series = robot_series(results, 1)
        assert series.dim == 3
        assert series.ticks == 60
        assert series.nees_in_bounds >= 0.90
        assert series.rmse_within_two_sigma >= 0.95

    def test_overconfident_estimator_flagged(self, rng):
        results = synthetic_results(rng, runs=40, ticks=60, dim=3, cov_scale=0.5)
        series = robot_series(results, 1)
        assert series.nees_in_bounds <= 0.05

    def test_zero_error_gives_zero_rmse(self):
        slot = VariableId(VariableKind.TARGET_STATE, 1, 0, 2)
        stats = [TickStats(error=np.zeros(2), cov=np.eye(2)) for _ in range(5)]
        r = RunResult(
            scenario="s", run_idx=0, rule="hs-cf", delivery=1.0, steps=5,
            slots={1: (slot,)}, stats={1: stats}, records=[], fallbacks=0,
            comm=None, wall_clock=0.0,
        )
        series = robot_series([r], 1)
        assert np.all(series.rmse == 0.0)
        # identity covariance means 2 * sqrt(trace/n) = 2 exactly
        assert np.allclose(series.two_sigma, 2.0)

    def test_rmse_pools_squared_error_across_runs(self):
        slot = VariableId(VariableKind.TARGET_STATE, 1, 0, 1)

        def one(err):
            return RunResult(
                scenario="s", run_idx=0, rule="hs-cf", delivery=1.0, steps=1,
                slots={1: (slot,)}, stats={1: [TickStats(np.array([err]), np.eye(1))]},
                records=[], fallbacks=0, comm=None, wall_clock=0.0,
            )

        series = robot_series([one(3.0), one(4.0)], 1)
        assert series.rmse[0] == pytest.approx(np.sqrt((9 + 16) / 2))

    def test_aggregate_covers_all_robots(self, rng):
        results = synthetic_results(rng, runs=3, ticks=4, dim=2)
        agg = aggregate(results)
        assert list(agg) == [1]
        assert agg[1].ticks == 4

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            robot_series([], 1)
