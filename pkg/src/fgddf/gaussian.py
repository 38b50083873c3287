"""Gaussian densities in information (canonical) form over named variable blocks.

The information form carries zeta = Lambda @ mean and Lambda = inv(cov).
Products of densities become entrywise sums after aligning variable orderings,
which is the workhorse operation of the whole package: factor products, fusion
updates, and channel-filter bookkeeping are all additions in this
parameterization. Marginalization is the expensive direction (a Schur
complement); conditioning is free (drop rows/columns).

Conventions
-----------
* Orderings are canonical (see `VariableOrdering`); aligning two forms never
  requires a permutation argument.
* Matrices are symmetrized on construction after an asymmetry check.
* Positive semidefiniteness is NOT enforced on construction: factor payloads
  may be rank-deficient and fusion differences may be indefinite. Callers that
  need PSD/PD ask for it explicitly.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import (
    DimensionMismatch,
    SingularCovariance,
    SingularInformation,
    SingularElimination,
    UnknownVariable,
)
from .variables import VariableId, VariableOrdering

# Relative eigenvalue floor below which a matrix counts as singular.
SINGULARITY_RTOL = 1.0e-12
# Slack for PSD checks: min eig >= -PSD_TOL * (1 + max |eig|).
PSD_TOL = 1.0e-9
# Largest tolerated asymmetry (relative to the largest entry) on construction.
SYMMETRY_TOL = 1.0e-9


def _check_symmetric(m: np.ndarray, what: str) -> np.ndarray:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{what} must be square, got shape {m.shape}")
    if m.size:
        scale = max(1.0, float(np.abs(m).max()))
        asym = float(np.abs(m - m.T).max())
        if asym > SYMMETRY_TOL * scale:
            raise DimensionMismatch(
                f"{what} is not symmetric (max asymmetry {asym:.3e})"
            )
    return 0.5 * (m + m.T)


def is_psd(m: np.ndarray, tol: float = PSD_TOL) -> bool:
    """True iff the symmetric matrix has no eigenvalue below -tol*(1+max|eig|)."""
    if m.size == 0:
        return True
    w = np.linalg.eigvalsh(m)
    return bool(w[0] >= -tol * (1.0 + float(np.abs(w).max())))


def min_eig_margin(m: np.ndarray) -> float:
    """Smallest eigenvalue, for diagnostics; +inf for empty matrices."""
    if m.size == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(m)[0])


def _spd_eig_inverse(m: np.ndarray, err: type, what: str) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via eigendecomposition.

    Raises ``err`` when the relative minimum eigenvalue falls below
    SINGULARITY_RTOL; the eigenbasis route keeps the inverse exactly symmetric.
    """
    if m.size == 0:
        return m.copy()
    w, v = np.linalg.eigh(m)
    wmax = float(w[-1])
    if wmax <= 0.0 or float(w[0]) <= SINGULARITY_RTOL * wmax:
        raise err(f"{what} is singular (eigenvalues in [{w[0]:.3e}, {wmax:.3e}])")
    inv = (v / w) @ v.T
    return 0.5 * (inv + inv.T)


class InfoForm:
    """Information vector/matrix pair over a canonical variable ordering."""

    __slots__ = ("ordering", "zeta", "lam")

    def __init__(self, ordering: VariableOrdering, zeta: np.ndarray, lam: np.ndarray):
        zeta = np.asarray(zeta, dtype=float).reshape(-1)
        lam = np.asarray(lam, dtype=float)
        if zeta.shape[0] != ordering.dim:
            raise DimensionMismatch(
                f"zeta has {zeta.shape[0]} entries for ordering of dim {ordering.dim}"
            )
        if lam.shape != (ordering.dim, ordering.dim):
            raise DimensionMismatch(
                f"lambda has shape {lam.shape} for ordering of dim {ordering.dim}"
            )
        if not (np.all(np.isfinite(zeta)) and np.all(np.isfinite(lam))):
            raise DimensionMismatch("information form contains non-finite entries")
        self.ordering = ordering
        self.zeta = zeta
        self.lam = _check_symmetric(lam, "information matrix")

    @staticmethod
    def zero(ordering: VariableOrdering) -> "InfoForm":
        d = ordering.dim
        return InfoForm(ordering, np.zeros(d), np.zeros((d, d)))

    @property
    def dim(self) -> int:
        return self.ordering.dim

    def __repr__(self) -> str:
        return f"InfoForm(dim={self.dim}, vars={list(self.ordering)!r})"

    def embed(self, target: VariableOrdering) -> "InfoForm":
        """Zero-padded copy of this form over a superset ordering."""
        if target == self.ordering:
            return self
        idx = target.indices_of(self.ordering)
        zeta = np.zeros(target.dim)
        lam = np.zeros((target.dim, target.dim))
        zeta[idx] = self.zeta
        lam[np.ix_(idx, idx)] = self.lam
        return InfoForm(target, zeta, lam)

    def to_moment(self) -> "MomentForm":
        return to_moment(self)

    def marginal(self, keep: Iterable[VariableId]) -> "InfoForm":
        return marginalize_info(self, keep)

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        return is_psd(self.lam, tol)


class MomentForm:
    """Mean/covariance pair over a canonical variable ordering."""

    __slots__ = ("ordering", "mean", "cov")

    def __init__(self, ordering: VariableOrdering, mean: np.ndarray, cov: np.ndarray):
        mean = np.asarray(mean, dtype=float).reshape(-1)
        cov = np.asarray(cov, dtype=float)
        if mean.shape[0] != ordering.dim:
            raise DimensionMismatch(
                f"mean has {mean.shape[0]} entries for ordering of dim {ordering.dim}"
            )
        if cov.shape != (ordering.dim, ordering.dim):
            raise DimensionMismatch(
                f"covariance has shape {cov.shape} for ordering of dim {ordering.dim}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise DimensionMismatch("moment form contains non-finite entries")
        self.ordering = ordering
        self.mean = mean
        self.cov = _check_symmetric(cov, "covariance matrix")

    @property
    def dim(self) -> int:
        return self.ordering.dim

    def __repr__(self) -> str:
        return f"MomentForm(dim={self.dim}, vars={list(self.ordering)!r})"

    def to_info(self) -> InfoForm:
        return to_info(self)

    def block(self, v: VariableId) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance block of one variable."""
        s = self.ordering.slice_of(v)
        return self.mean[s], self.cov[s, s]


def to_moment(a: InfoForm) -> MomentForm:
    """Invert the information form; raises SingularInformation when rank-deficient."""
    cov = _spd_eig_inverse(a.lam, SingularInformation, "information matrix")
    mean = cov @ a.zeta
    return MomentForm(a.ordering, mean, cov)


def to_info(m: MomentForm) -> InfoForm:
    """Invert the moment form; raises SingularCovariance when rank-deficient."""
    lam = _spd_eig_inverse(m.cov, SingularCovariance, "covariance matrix")
    zeta = lam @ m.mean
    return InfoForm(m.ordering, zeta, lam)


def add_info(a: InfoForm, b: InfoForm) -> InfoForm:
    """Density product: entrywise sum over the union ordering (zero-padded)."""
    if a.ordering == b.ordering:
        return InfoForm(a.ordering, a.zeta + b.zeta, a.lam + b.lam)
    union = a.ordering.union(b.ordering)
    zeta = np.zeros(union.dim)
    lam = np.zeros((union.dim, union.dim))
    for f in (a, b):
        idx = union.indices_of(f.ordering)
        zeta[idx] += f.zeta
        lam[np.ix_(idx, idx)] += f.lam
    return InfoForm(union, zeta, lam)


def subtract_info(a: InfoForm, b: InfoForm) -> InfoForm:
    """Density quotient a/b over a's ordering; b must not mention new variables.

    The result may be indefinite; validity is the caller's concern (fusion
    differences legitimately carry negative directions).
    """
    for v in b.ordering:
        if v not in a.ordering:
            raise UnknownVariable(f"{v!r} appears in subtrahend only")
    if a.ordering == b.ordering:
        return InfoForm(a.ordering, a.zeta - b.zeta, a.lam - b.lam)
    idx = a.ordering.indices_of(b.ordering)
    zeta = a.zeta.copy()
    lam = a.lam.copy()
    zeta[idx] -= b.zeta
    lam[np.ix_(idx, idx)] -= b.lam
    return InfoForm(a.ordering, zeta, lam)


def marginalize_info(a: InfoForm, keep: Iterable[VariableId]) -> InfoForm:
    """Marginal density over ``keep`` via Schur complement on the eliminated block.

    Requires the eliminated block to be well-conditioned; an unconstrained
    variable (zero information) raises SingularElimination.
    """
    keep_ord = a.ordering.restrict(keep)
    if keep_ord == a.ordering:
        return a
    elim = [v for v in a.ordering if v not in keep_ord]
    ki = a.ordering.indices_of(keep_ord)
    ei = a.ordering.indices_of(elim)
    lam_kk = a.lam[np.ix_(ki, ki)]
    lam_ke = a.lam[np.ix_(ki, ei)]
    lam_ee = a.lam[np.ix_(ei, ei)]
    w = np.linalg.eigvalsh(lam_ee)
    wmax = float(w[-1])
    if wmax <= 0.0 or float(w[0]) <= SINGULARITY_RTOL * wmax:
        raise SingularElimination(
            f"eliminated block over {elim!r} is singular "
            f"(eigenvalues in [{w[0]:.3e}, {wmax:.3e}])"
        )
    rhs = np.concatenate([lam_ke.T, a.zeta[ei, None]], axis=1)
    sol = np.linalg.solve(lam_ee, rhs)
    lam_m = lam_kk - lam_ke @ sol[:, :-1]
    zeta_m = a.zeta[ki] - lam_ke @ sol[:, -1]
    return InfoForm(keep_ord, zeta_m, 0.5 * (lam_m + lam_m.T))


def is_conservative_wrt(a: InfoForm, b: InfoForm, tol: float = PSD_TOL) -> bool:
    """True iff a claims no more information than b: lam_b - lam_a is PSD.

    Both forms must share an ordering; conservativeness across different
    variable sets is not defined here.
    """
    if a.ordering != b.ordering:
        raise DimensionMismatch("conservativeness requires identical orderings")
    return is_psd(b.lam - a.lam, tol)
