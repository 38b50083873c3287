"""Bipartite factor graphs over information-form Gaussian factors.

A graph is an immutable collection of factors; the represented density is the
product (entrywise information sum) of all payloads. Graphs never mutate:
every operation returns a new graph, so robot beliefs and channel-filter
states can share structure safely.

Elimination replaces the factors touching the dropped variables with their
marginalized product, one replacement per connected component so that factors
over unrelated blocks are not merged. Conservative re-factorization rewrites
the joint into decoupled blocks, scaled down just enough to never claim more
information than the original density: the largest lambda in (0, 1] with
lambda * blockdiag(Lambda) <= Lambda (as quadratic forms) is the smallest
generalized eigenvalue of the pencil (Lambda, blockdiag(Lambda)).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import DeflationFailure, EmptyGraph, UnknownVariable
from .gaussian import InfoForm, marginalize_info
from .variables import VariableId, VariableOrdering

# Off-block mass below this (relative to the largest entry) counts as already
# factored; the graph is returned unchanged.
_STRUCTURE_ATOL = 1.0e-12


class Provenance(enum.Enum):
    """Where a factor came from; lets tests tell exact factors from fill-in."""

    PRIOR = "prior"
    TRANSITION = "transition"
    MEASUREMENT = "measurement"
    FUSION = "fusion"
    ELIMINATION = "elimination"


@dataclass(frozen=True)
class Factor:
    """One information-form potential attached to a subset of variables."""

    id: int
    provenance: Provenance
    payload: InfoForm

    @property
    def variables(self) -> tuple[VariableId, ...]:
        return self.payload.ordering.variables


class FactorGraph:
    """Immutable factor collection; the density is the product of payloads."""

    __slots__ = ("_factors", "_variables", "_next_id")

    def __init__(self, factors: Iterable[Factor] = (), next_id: int | None = None):
        fs = tuple(factors)
        self._factors = fs
        vs: set[VariableId] = set()
        for f in fs:
            vs.update(f.variables)
        self._variables = frozenset(vs)
        if next_id is None:
            next_id = 1 + max((f.id for f in fs), default=-1)
        self._next_id = next_id

    @property
    def factors(self) -> tuple[Factor, ...]:
        return self._factors

    @property
    def variables(self) -> frozenset[VariableId]:
        return self._variables

    @property
    def adjacency(self) -> dict[int, tuple[VariableId, ...]]:
        return {f.id: f.variables for f in self._factors}

    @property
    def next_id(self) -> int:
        """Smallest factor id not yet used; new factors should take it."""
        return self._next_id

    def __len__(self) -> int:
        return len(self._factors)

    def __repr__(self) -> str:
        return f"FactorGraph({len(self._factors)} factors, {len(self._variables)} variables)"

    def add_factor(self, provenance: Provenance, payload: InfoForm) -> "FactorGraph":
        f = Factor(self._next_id, provenance, payload)
        return FactorGraph(self._factors + (f,), next_id=self._next_id + 1)

    def joint_info(self) -> InfoForm:
        """Product of all factors over the canonical union ordering.

        Factors are accumulated in a content-sorted order, so the result is
        bitwise independent of insertion order.
        """
        if not self._factors:
            raise EmptyGraph("graph has no factors")
        union = VariableOrdering(self._variables)
        zeta = np.zeros(union.dim)
        lam = np.zeros((union.dim, union.dim))
        key = lambda f: (f.variables, f.provenance.value, f.id)
        for f in sorted(self._factors, key=key):
            idx = union.indices_of(f.payload.ordering)
            zeta[idx] += f.payload.zeta
            lam[np.ix_(idx, idx)] += f.payload.lam
        return InfoForm(union, zeta, lam)

    def eliminate(self, drop: Iterable[VariableId]) -> "FactorGraph":
        """Marginalize the dropped variables out of the represented density.

        Factors touching the dropped set are grouped by connectivity; each
        connected component collapses into a single elimination factor over
        its remaining variables. Untouched factors carry over verbatim.
        """
        drop = set(drop)
        if not drop:
            return self
        missing = drop - self._variables
        if missing:
            raise UnknownVariable(f"cannot eliminate absent variables {sorted(missing)!r}")
        touching = [f for f in self._factors if drop.intersection(f.variables)]
        untouched = [f for f in self._factors if not drop.intersection(f.variables)]

        new_factors = list(untouched)
        next_id = self._next_id
        for component in _connected_components(touching):
            product = _sum_payloads(component)
            keep = [v for v in product.ordering if v not in drop]
            if not keep:
                continue  # fully eliminated; constant potential drops out
            payload = marginalize_info(product, keep)
            new_factors.append(Factor(next_id, Provenance.ELIMINATION, payload))
            next_id += 1
        return FactorGraph(new_factors, next_id=next_id)

    def to_dot(self) -> str:
        """GraphViz DOT rendering for debugging; no external dependencies."""
        lines = ["graph belief {", "  node [fontsize=10];"]
        for v in sorted(self._variables):
            lines.append(f'  "{v!r}" [shape=ellipse];')
        for f in self._factors:
            label = f"{f.provenance.value}#{f.id}"
            lines.append(f'  "f{f.id}" [shape=box, label="{label}"];')
            for v in f.variables:
                lines.append(f'  "f{f.id}" -- "{v!r}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _sum_payloads(factors: Sequence[Factor]) -> InfoForm:
    union_vars: set[VariableId] = set()
    for f in factors:
        union_vars.update(f.variables)
    union = VariableOrdering(union_vars)
    zeta = np.zeros(union.dim)
    lam = np.zeros((union.dim, union.dim))
    key = lambda f: (f.variables, f.provenance.value, f.id)
    for f in sorted(factors, key=key):
        idx = union.indices_of(f.payload.ordering)
        zeta[idx] += f.payload.zeta
        lam[np.ix_(idx, idx)] += f.payload.lam
    return InfoForm(union, zeta, lam)


def _connected_components(factors: Sequence[Factor]) -> list[list[Factor]]:
    """Group factors connected through shared variables; deterministic order."""
    var_to_factors: dict[VariableId, list[int]] = {}
    for i, f in enumerate(factors):
        for v in f.variables:
            var_to_factors.setdefault(v, []).append(i)
    seen = [False] * len(factors)
    components = []
    for i in range(len(factors)):
        if seen[i]:
            continue
        stack, members = [i], []
        seen[i] = True
        while stack:
            j = stack.pop()
            members.append(j)
            for v in factors[j].variables:
                for k in var_to_factors[v]:
                    if not seen[k]:
                        seen[k] = True
                        stack.append(k)
        components.append([factors[j] for j in sorted(members)])
    components.sort(key=lambda fs: min(f.variables[0] for f in fs))
    return components


def _merge_overlapping(groups: Sequence[frozenset[VariableId]]) -> list[frozenset[VariableId]]:
    merged: list[set[VariableId]] = []
    for g in groups:
        g = set(g)
        absorbed = []
        for m in merged:
            if m & g:
                g |= m
                absorbed.append(m)
        for m in absorbed:
            merged.remove(m)
        merged.append(g)
    return [frozenset(m) for m in sorted(merged, key=lambda s: min(s))]


def deflation_scale(joint: InfoForm, groups: Sequence[frozenset[VariableId]]) -> float:
    """Largest lambda in (0, 1] with lambda*blockdiag(Lambda) <= Lambda.

    ``groups`` must partition the joint's variables. Returns 1.0 when the
    joint is already block-structured. The scale is the smallest generalized
    eigenvalue of (Lambda, blockdiag), clipped to (0, 1]; a non-positive
    result signals an indefinite joint and raises DeflationFailure.
    """
    lam = joint.lam
    block = np.zeros_like(lam)
    for g in groups:
        idx = joint.ordering.indices_of(g)
        block[np.ix_(idx, idx)] = lam[np.ix_(idx, idx)]
    off = lam - block
    scale = max(1.0, float(np.abs(lam).max()))
    if float(np.abs(off).max()) <= _STRUCTURE_ATOL * scale:
        return 1.0
    try:
        eigs = scipy.linalg.eigh(lam, block, eigvals_only=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as e:
        raise DeflationFailure(f"generalized eigensolve failed: {e}") from e
    lo = float(eigs[0])
    if not np.isfinite(lo) or lo <= 0.0:
        raise DeflationFailure(f"no positive deflation scale (min eigenvalue {lo:.3e})")
    return min(1.0, lo)


def conservative_refactor(
    g: FactorGraph,
    local_vars: Iterable[VariableId],
    common_groups: Sequence[Iterable[VariableId]],
) -> FactorGraph:
    """Rewrite the graph so no factor couples distinct neighbor-common groups.

    ``common_groups`` holds, per neighbor, the variables shared with that
    neighbor; ``local_vars`` are the remaining variables. Overlapping common
    groups merge (their coupling is legitimate, flowing through the shared
    variables). The target structure is block-diagonal over the partition
    {local, merged groups...}: correlation between the private block and any
    shared block, or between shared blocks of different neighbors, must not
    persist across filter steps, or repeated exchanges re-count it as new
    information. With fewer than two nonempty blocks there is nothing to
    decouple and the graph is returned unchanged. Otherwise the joint is
    replaced by one factor per block, deflated by the largest scale that
    keeps the result conservative with respect to the input density. Means
    are preserved exactly.
    """
    merged = _merge_overlapping([frozenset(c) for c in common_groups])
    merged = [m for m in merged if m]
    local = frozenset(local_vars)
    groups = ([local] if local else []) + merged
    if len(groups) <= 1:
        return g
    covered: set[VariableId] = set()
    for grp in groups:
        covered.update(grp)
    if covered != set(g.variables):
        raise UnknownVariable(
            f"groups must partition graph variables; symmetric difference "
            f"{sorted(covered ^ set(g.variables))!r}"
        )

    joint = g.joint_info()
    scale = deflation_scale(joint, groups)
    if scale == 1.0:
        return g

    mean = np.linalg.solve(joint.lam, joint.zeta)
    next_id = g.next_id
    factors = []
    for grp in groups:
        ordering = VariableOrdering(grp)
        idx = joint.ordering.indices_of(ordering)
        lam_b = scale * joint.lam[np.ix_(idx, idx)]
        zeta_b = lam_b @ mean[idx]
        factors.append(
            Factor(next_id, Provenance.ELIMINATION, InfoForm(ordering, zeta_b, lam_b))
        )
        next_id += 1
    return FactorGraph(factors, next_id=next_id)
