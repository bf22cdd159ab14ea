"""Spline bases for temporally smooth U_k.

U_k is confined to the column space of a per-slice basis matrix M_k whose
column j is basis function j sampled at the rows of slice k. Rows are placed
either at their visit days (gap-aware) or at their indices 0..I_k-1.
Fitting then runs on the projections C_k^T X_k, where C_k spans the column
space of M_k, and U_k = C_k Q_k H is recovered afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

RANK_RTOL = 1e-10
DEFAULT_DEGREE = 3


class SplineError(ValueError):
    pass


@dataclass
class SplineBasis:
    """Knot vector ``knots`` (length m) and degree; n_basis = m - degree - 1."""

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=np.float64)
        if self.degree < 0:
            raise SplineError("degree must be non-negative")
        if np.any(np.diff(self.knots) < 0):
            raise SplineError("knots must be non-decreasing")
        if self.n_basis < 1:
            raise SplineError("knot vector too short for the degree")

    @property
    def n_basis(self):
        return self.knots.size - self.degree - 1

    def evaluate(self, t):
        """Matrix of every basis function at the points ``t`` (len(t) x n_basis)."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        return np.array([[eval_basis(self, i, self.degree, x) for i in range(self.n_basis)] for x in t])


@dataclass
class SliceBasisMatrix:
    """M_k together with the orthonormal basis C_k of its column space."""

    matrix: np.ndarray
    left_orthonormal: np.ndarray

    @property
    def rank(self):
        return self.left_orthonormal.shape[1]


def _last_interval(knots):
    """Index of the last non-empty knot interval."""
    nonempty = np.flatnonzero(knots[1:] > knots[:-1])
    return int(nonempty[-1]) if nonempty.size else -1


def eval_basis(basis: SplineBasis, i, d, t):
    """Value of basis function ``i`` of degree ``d`` at ``t``.

    Cox-de Boor recursion on ``basis.knots``; terms with a zero denominator
    contribute zero. Degree-0 pieces are 1 on [knot_i, knot_{i+1}) except
    the last non-empty interval, which is closed on the right.
    """
    knots = basis.knots
    if not 0 <= i < knots.size - d - 1:
        raise IndexError(f"basis index {i} out of range for degree {d}")
    if not np.isfinite(t):
        return 0.0
    return _cox_de_boor(knots, i, d, float(t), _last_interval(knots))


def _cox_de_boor(knots, i, d, t, last):
    if d == 0:
        lo, hi = knots[i], knots[i + 1]
        if lo <= t < hi or (i == last and t == hi):
            return 1.0
        return 0.0
    value = 0.0
    den = knots[i + d] - knots[i]
    if den > 0:
        value += (t - knots[i]) / den * _cox_de_boor(knots, i, d - 1, t, last)
    den = knots[i + d + 1] - knots[i + 1]
    if den > 0:
        value += (knots[i + d + 1] - t) / den * _cox_de_boor(knots, i + 1, d - 1, t, last)
    return value


def make_knots(lo, hi, n_basis, degree):
    """Clamped knot vector on [lo, hi] with evenly spaced interior knots."""
    n_interior = n_basis - degree - 1
    if n_interior < 0:
        raise SplineError(f"n_basis={n_basis} must be at least degree + 1 = {degree + 1}")
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])


def build_basis(visit_days, n_basis, degree=DEFAULT_DEGREE, gap_aware=True, n_rows=None):
    """Basis and sampled basis matrix M_k for one slice.

    Parameters
    ----------
    visit_days : sequence of int or None
        Day offset of each row. Required when ``gap_aware``.
    n_basis : int
        Number of basis functions l; must not exceed the row count.
    degree : int
        Spline degree d.
    gap_aware : bool
        Sample at visit days over [first day, last day] instead of at row
        indices over [0, I_k - 1].
    n_rows : int, optional
        Row count when ``visit_days`` is not given.
    """
    if gap_aware:
        if visit_days is None:
            raise SplineError("gap-aware basis needs visit days")
        points = np.asarray(visit_days, dtype=np.float64)
    else:
        n = len(visit_days) if visit_days is not None else n_rows
        if n is None:
            raise SplineError("need visit_days or n_rows")
        points = np.arange(n, dtype=np.float64)
    I_k = points.size
    if I_k < 1:
        raise SplineError("slice has no rows")
    if n_basis > I_k:
        raise SplineError(f"n_basis={n_basis} exceeds the {I_k} rows of the slice")
    if n_basis < degree + 1:
        raise SplineError(f"n_basis={n_basis} must be at least degree + 1 = {degree + 1}")
    lo, hi = points.min(), points.max()
    if hi == lo:
        raise SplineError("all evaluation points coincide")
    basis = SplineBasis(make_knots(lo, hi, n_basis, degree), degree)
    M = basis.evaluate(points)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    keep = s > RANK_RTOL * s[0]
    return basis, SliceBasisMatrix(M, U[:, keep])


def project_slice(sbm: SliceBasisMatrix, X_k, n_cols=None):
    """Dense C_k^T X_k (rank x J).

    ``X_k`` may be a :class:`~parafac2_admm.tensor.SparseSlice` (then
    ``n_cols`` is required), a scipy sparse matrix or a dense array.
    """
    C = sbm.left_orthonormal
    if hasattr(X_k, "to_csr"):
        if n_cols is None:
            raise ValueError("n_cols is required for a SparseSlice")
        X_k = X_k.to_csr(n_cols)
    if X_k.shape[0] != C.shape[0]:
        raise ValueError(f"slice has {X_k.shape[0]} rows, basis has {C.shape[0]}")
    if sp.issparse(X_k):
        return np.asarray((X_k.T @ C).T)
    return C.T @ np.asarray(X_k)
