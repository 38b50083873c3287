"""Factor graph construction, elimination, and conservative re-factorization.

The deflation scale is cross-checked against a matrix-square-root generalized
eigenvalue oracle computed in the test, and elimination is checked against
the joint-then-marginalize route.
"""

import numpy as np
import pytest

from fgddf.errors import DeflationFailure, EmptyGraph, UnknownVariable
from fgddf.factor_graph import (
    Factor,
    FactorGraph,
    Provenance,
    conservative_refactor,
    deflation_scale,
)
from fgddf.gaussian import (
    InfoForm,
    add_info,
    is_conservative_wrt,
    marginalize_info,
    to_moment,
)
from fgddf.variables import VariableOrdering

from conftest import ordering, pose, random_spd, scalar_var, target


def prior(ord_, zeta, lam, fid=0):
    return Factor(fid, Provenance.PRIOR, InfoForm(ord_, zeta, lam))


def random_factor(rng, vs, fid, prov=Provenance.MEASUREMENT, jitter=0.5):
    ord_ = ordering(*vs)
    return Factor(fid, prov, InfoForm(ord_, rng.normal(size=ord_.dim), random_spd(rng, ord_.dim, jitter)))


class TestConstruction:
    def test_empty_graph_joint_raises(self):
        with pytest.raises(EmptyGraph):
            FactorGraph().joint_info()

    def test_single_prior_round_trip(self, rng):
        f = random_factor(rng, [pose(1)], 0, Provenance.PRIOR)
        g = FactorGraph([f])
        j = g.joint_info()
        assert np.array_equal(j.zeta, f.payload.zeta)
        assert np.array_equal(j.lam, f.payload.lam)

    def test_add_factor_persistent(self, rng):
        g0 = FactorGraph()
        g1 = g0.add_factor(Provenance.PRIOR, random_factor(rng, [target(1)], 0).payload)
        assert len(g0) == 0 and len(g1) == 1
        assert g1.variables == {target(1)}

    def test_variable_set_mirrors_factors(self, rng):
        g = FactorGraph([
            random_factor(rng, [pose(1), target(1)], 0),
            random_factor(rng, [target(2)], 1),
        ])
        assert g.variables == {pose(1), target(1), target(2)}
        assert set(g.adjacency.keys()) == {0, 1}
        assert g.adjacency[0] == (pose(1), target(1))

    def test_fresh_ids_monotone(self, rng):
        g = FactorGraph([random_factor(rng, [target(1)], 7)])
        g2 = g.add_factor(Provenance.MEASUREMENT, random_factor(rng, [target(1)], 0).payload)
        assert g2.factors[-1].id == 8


class TestJointInfo:
    def test_disjoint_factors_block_diagonal(self, rng):
        fa = random_factor(rng, [target(1)], 0)
        fb = random_factor(rng, [target(2)], 1)
        j = FactorGraph([fa, fb]).joint_info()
        assert np.allclose(j.lam[:2, 2:], 0.0)
        assert np.allclose(j.lam[:2, :2], fa.payload.lam)
        assert np.allclose(j.lam[2:, 2:], fb.payload.lam)

    def test_matches_pairwise_add_oracle(self, rng):
        factors = [
            random_factor(rng, [pose(1), target(1)], 0),
            random_factor(rng, [target(1), target(2)], 1),
            random_factor(rng, [target(2)], 2),
            random_factor(rng, [pose(1)], 3),
            random_factor(rng, [pose(1), target(2)], 4),
        ]
        j = FactorGraph(factors).joint_info()
        acc = factors[0].payload
        for f in factors[1:]:
            acc = add_info(acc, f.payload)
        assert np.allclose(j.zeta, acc.zeta, atol=1e-12)
        assert np.allclose(j.lam, acc.lam, atol=1e-12)

    def test_insertion_order_invariant_bitwise(self, rng):
        factors = [
            random_factor(rng, [pose(1), target(1)], i) for i in range(5)
        ]
        j1 = FactorGraph(factors).joint_info()
        j2 = FactorGraph(factors[::-1]).joint_info()
        assert np.array_equal(j1.zeta, j2.zeta)
        assert np.array_equal(j1.lam, j2.lam)


class TestEliminate:
    def test_two_variable_chain_oracle(self, rng):
        # prior on x0, transition-style factor over (x0, x1); eliminating x0
        # must reproduce the moment-space marginal over x1
        x0, x1 = scalar_var(1, 0), scalar_var(1, 1)
        f0 = prior(ordering(x0), [1.0], [[2.0]], fid=0)
        f01 = Factor(1, Provenance.TRANSITION, InfoForm(
            ordering(x0, x1), [0.5, -0.2], [[1.5, -1.0], [-1.0, 1.2]]))
        g = FactorGraph([f0, f01])
        reduced = g.eliminate([x0])
        got = reduced.joint_info()

        full = g.joint_info()
        m = to_moment(full)
        i1 = full.ordering.indices_of([x1])
        var1 = m.cov[np.ix_(i1, i1)]
        assert got.lam[0, 0] == pytest.approx(1.0 / var1[0, 0], rel=1e-12)
        assert got.zeta[0] == pytest.approx(m.mean[i1][0] / var1[0, 0], rel=1e-12)

    def test_untouched_factors_survive_identically(self, rng):
        fa = random_factor(rng, [target(1)], 0)
        fb = random_factor(rng, [target(2)], 1)
        fc = random_factor(rng, [target(2), target(3)], 2)
        g = FactorGraph([fa, fb, fc])
        reduced = g.eliminate([target(3)])
        assert fa in reduced.factors and fb in reduced.factors
        elim = [f for f in reduced.factors if f.provenance is Provenance.ELIMINATION]
        assert len(elim) == 1
        assert elim[0].variables == (target(2),)

    def test_connected_components_stay_separate(self, rng):
        # two disjoint chains; eliminating both time-0 variables must yield
        # two elimination factors, not one joined fill-in factor
        a0, a1 = target(1, 0), target(1, 1)
        b0, b1 = target(2, 0), target(2, 1)
        g = FactorGraph([
            random_factor(rng, [a0], 0, Provenance.PRIOR),
            random_factor(rng, [a0, a1], 1, Provenance.TRANSITION),
            random_factor(rng, [b0], 2, Provenance.PRIOR),
            random_factor(rng, [b0, b1], 3, Provenance.TRANSITION),
        ])
        reduced = g.eliminate([a0, b0])
        elim = [f for f in reduced.factors if f.provenance is Provenance.ELIMINATION]
        assert sorted(f.variables for f in elim) == [(a1,), (b1,)]
        joint = reduced.joint_info()
        i_a = joint.ordering.indices_of([a1])
        i_b = joint.ordering.indices_of([b1])
        assert np.allclose(joint.lam[np.ix_(i_a, i_b)], 0.0)

    def test_marginal_preserved_random_graphs(self, rng):
        for _ in range(10):
            vs = [pose(1), target(1), target(2), target(3)]
            factors = [random_factor(rng, [v], i, Provenance.PRIOR) for i, v in enumerate(vs)]
            factors.append(random_factor(rng, [pose(1), target(1)], 10))
            factors.append(random_factor(rng, [pose(1), target(2)], 11))
            factors.append(random_factor(rng, [target(2), target(3)], 12))
            g = FactorGraph(factors)
            drop = [pose(1), target(3)]
            keep = [target(1), target(2)]
            direct = marginalize_info(g.joint_info(), keep)
            via_graph = g.eliminate(drop).joint_info()
            assert np.allclose(via_graph.lam, direct.lam, atol=1e-9)
            assert np.allclose(via_graph.zeta, direct.zeta, atol=1e-9)

    def test_unknown_variable_raises(self, rng):
        g = FactorGraph([random_factor(rng, [target(1)], 0)])
        with pytest.raises(UnknownVariable):
            g.eliminate([target(9)])

    def test_empty_drop_is_noop(self, rng):
        g = FactorGraph([random_factor(rng, [target(1)], 0)])
        assert g.eliminate([]) is g

    def test_eliminate_everything_empties_graph(self, rng):
        g = FactorGraph([random_factor(rng, [target(1)], 0)])
        assert len(g.eliminate([target(1)])) == 0


class TestConservativeRefactor:
    def test_already_structured_unchanged(self, rng):
        fa = random_factor(rng, [target(1)], 0, Provenance.PRIOR)
        fb = random_factor(rng, [target(2)], 1, Provenance.PRIOR)
        g = FactorGraph([fa, fb])
        out = conservative_refactor(g, [], [[target(1)], [target(2)]])
        assert out is g

    def test_single_common_group_untouched(self, rng):
        # couplings inside one neighbor group are legitimate
        g = FactorGraph([random_factor(rng, [target(1), target(2)], 0)])
        out = conservative_refactor(g, [], [[target(1), target(2)]])
        assert out is g

    def test_overlapping_groups_merge(self, rng):
        # groups {t1,t2} and {t2} share t2 -> merged, nothing to decouple
        g = FactorGraph([random_factor(rng, [target(1), target(2)], 0)])
        out = conservative_refactor(g, [], [[target(1), target(2)], [target(2)]])
        assert out is g

    def test_hand_computed_two_block_split(self):
        # joint lam = [[2,1],[1,2]], zeta = [1,1]; splitting into two scalar
        # blocks: blockdiag = diag(2,2), largest feasible scale is 0.5,
        # deflated lam = diag(1,1); mean [1/3,1/3] is preserved
        v1, v2 = scalar_var(1), scalar_var(2)
        f = Factor(0, Provenance.PRIOR, InfoForm(
            ordering(v1, v2), [1.0, 1.0], [[2.0, 1.0], [1.0, 2.0]]))
        g = FactorGraph([f])
        out = conservative_refactor(g, [], [[v1], [v2]])
        j = out.joint_info()
        assert np.allclose(j.lam, np.eye(2), atol=1e-12)
        assert np.allclose(j.zeta, [1.0 / 3.0, 1.0 / 3.0], atol=1e-12)
        assert len(out) == 2

    def test_deflation_scale_against_sqrt_oracle(self, rng):
        for _ in range(20):
            vs = [target(1), target(2), target(3)]
            ord_ = ordering(*vs)
            lam = random_spd(rng, 6, jitter=0.3)
            joint = InfoForm(ord_, rng.normal(size=6), lam)
            groups = [frozenset([v]) for v in vs]
            got = deflation_scale(joint, groups)
            # oracle: min eig of Minv_sqrt @ lam @ Minv_sqrt
            block = np.zeros_like(lam)
            for gset in groups:
                idx = ord_.indices_of(gset)
                block[np.ix_(idx, idx)] = lam[np.ix_(idx, idx)]
            w, v = np.linalg.eigh(block)
            inv_sqrt = (v / np.sqrt(w)) @ v.T
            oracle = float(np.linalg.eigvalsh(inv_sqrt @ lam @ inv_sqrt)[0])
            assert got == pytest.approx(min(1.0, oracle), abs=1e-10)

    def test_postconditions_random(self, rng):
        for _ in range(20):
            f = random_factor(rng, [pose(1), target(1), target(2)], 0, Provenance.PRIOR, jitter=0.2)
            g = FactorGraph([f])
            out = conservative_refactor(g, [pose(1)], [[target(1)], [target(2)]])
            j_in = g.joint_info()
            j_out = out.joint_info()
            # conservative: output claims no more information
            assert is_conservative_wrt(j_out, j_in)
            # mean preserved
            m_in = to_moment(j_in)
            m_out = to_moment(j_out)
            assert np.allclose(m_out.mean, m_in.mean, atol=1e-9)
            # covariance dominates
            assert np.all(np.linalg.eigvalsh(m_out.cov - m_in.cov) >= -1e-9)
            # no factor couples the two target groups
            for fac in out.factors:
                touches1 = target(1) in fac.variables
                touches2 = target(2) in fac.variables
                assert not (touches1 and touches2)

    def test_idempotent(self, rng):
        f = random_factor(rng, [pose(1), target(1), target(2)], 0, Provenance.PRIOR, jitter=0.2)
        g = FactorGraph([f])
        once = conservative_refactor(g, [pose(1)], [[target(1)], [target(2)]])
        twice = conservative_refactor(once, [pose(1)], [[target(1)], [target(2)]])
        assert twice is once

    def test_partition_must_cover(self, rng):
        g = FactorGraph([random_factor(rng, [pose(1), target(1), target(2)], 0)])
        with pytest.raises(UnknownVariable):
            conservative_refactor(g, [], [[target(1)], [target(2)]])

    def test_refactored_factors_marked_elimination(self, rng):
        f = random_factor(rng, [target(1), target(2)], 0, Provenance.PRIOR, jitter=0.2)
        g = FactorGraph([f])
        out = conservative_refactor(g, [], [[target(1)], [target(2)]])
        assert all(fac.provenance is Provenance.ELIMINATION for fac in out.factors)


class TestDot:
    def test_dot_mentions_every_node(self, rng):
        g = FactorGraph([
            random_factor(rng, [pose(1), target(1)], 0),
            random_factor(rng, [target(1)], 1, Provenance.PRIOR),
        ])
        dot = g.to_dot()
        assert dot.startswith("graph belief {")
        assert "robot_pose[1]@0" in dot
        assert "target_state[1]@0" in dot
        assert 'shape=box' in dot and "measurement#0" in dot and "prior#1" in dot
