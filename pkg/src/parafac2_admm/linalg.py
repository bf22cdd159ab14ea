"""Dense kernels: thin SVD, Procrustes polar factor, cached SPD solves,
Gram/Hadamard products and a naive Khatri-Rao product for testing.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

RANK_TOL = 1e-12
# Gram-trick polar factor is only trusted below this Gram condition number.
GRAM_COND_LIMIT = 1e7


class RankDeficiencyWarning(RuntimeWarning):
    """Polar factor of a rank-deficient matrix; the null space was completed arbitrarily."""


class CholeskyError(np.linalg.LinAlgError):
    def __init__(self, minor):
        self.minor = minor
        super().__init__(f"leading minor of order {minor} is not positive definite")


@dataclass
class ThinSvd:
    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    def reconstruct(self):
        return (self.left * self.singular_values) @ self.right.T


def _check_finite(A, name="input"):
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite values")


def thin_svd(A, r=None) -> ThinSvd:
    """Rank-``r`` truncated SVD of ``A`` with descending singular values."""
    A = np.asarray(A, dtype=np.float64)
    _check_finite(A)
    m, n = A.shape
    full = min(m, n)
    r = full if r is None else int(r)
    if not 1 <= r <= full:
        raise ValueError(f"target rank {r} outside [1, {full}]")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return ThinSvd(U[:, :r], s[:r], Vt[:r].T)


def orthonormal_polar(A, method="auto", return_deficient=False):
    """Orthonormal-column matrix Q maximizing trace(A^T Q).

    This is the orthogonal Procrustes solution ``left @ right.T`` from the
    thin SVD of the tall matrix ``A``. With ``method="gram"`` (or ``"auto"``
    when ``A`` is much taller than wide) the factor is computed from the
    eigendecomposition of ``A^T A``; ill-conditioned inputs fall back to the
    direct SVD.

    A rank-deficient ``A`` still yields an orthonormal Q (the SVD basis
    completes the null space) and emits :class:`RankDeficiencyWarning`.
    """
    A = np.asarray(A, dtype=np.float64)
    _check_finite(A)
    m, r = A.shape
    if m < r:
        raise ValueError(f"need rows >= cols for an orthonormal polar factor, got {A.shape}")
    if method not in ("auto", "gram", "svd"):
        raise ValueError(f"unknown method {method!r}")
    use_gram = method == "gram" or (method == "auto" and m >= 4 * r)
    if use_gram:
        Q, ok = _gram_polar(A[None])
        if ok[0]:
            return (Q[0], False) if return_deficient else Q[0]
    svd = thin_svd(A, r)
    s = svd.singular_values
    deficient = bool(s[0] == 0 or s[-1] < RANK_TOL * s[0])
    if deficient:
        warnings.warn("rank-deficient Procrustes input", RankDeficiencyWarning, stacklevel=2)
    Q = svd.left @ svd.right.T
    return (Q, deficient) if return_deficient else Q


def _gram_polar(blocks):
    """Batched polar factors of equally shaped blocks via A^T A.

    Returns ``(Q, ok)`` where ``ok`` flags blocks whose Gram condition number
    allowed the shortcut; ``Q`` is meaningless where ``ok`` is False.
    """
    gram = np.einsum("kmi,kmj->kij", blocks, blocks)
    evals, evecs = np.linalg.eigh(gram)
    top = evals[:, -1]
    ok = (evals[:, 0] > 0) & (top > 0) & (evals[:, 0] * GRAM_COND_LIMIT > top)
    safe = np.where(ok[:, None], evals, 1.0)
    inv_sqrt = np.einsum("kij,kj,klj->kil", evecs, 1.0 / np.sqrt(safe), evecs)
    return np.einsum("kmi,kil->kml", blocks, inv_sqrt), ok


def polar_rows(A, offsets):
    """Polar factor of each row block ``A[offsets[k]:offsets[k+1]]``.

    Returns the stacked factors and the number of rank-deficient blocks.
    Blocks are handled with the Gram shortcut when well conditioned and
    tall, otherwise by direct SVD.
    """
    out = np.empty_like(A)
    r = A.shape[1]
    n_deficient = 0
    sizes = np.diff(offsets)
    for size in np.unique(sizes):
        ks = np.flatnonzero(sizes == size)
        idx = offsets[ks][:, None] + np.arange(size)[None, :]
        blocks = A[idx]
        done = np.zeros(ks.size, dtype=bool)
        if size >= 4 * r:
            Q, done = _gram_polar(blocks)
            out[idx[done]] = Q[done]
        for pos in np.flatnonzero(~done):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RankDeficiencyWarning)
                Q, deficient = orthonormal_polar(blocks[pos], method="svd", return_deficient=True)
            out[idx[pos]] = Q
            n_deficient += deficient
    return out, n_deficient


@dataclass
class CholeskyFactor:
    """Lower-triangular L with L L^T = G + rho I."""

    lower: np.ndarray

    def solve(self, rhs):
        y = solve_triangular(self.lower, rhs, lower=True, check_finite=False)
        return solve_triangular(self.lower.T, y, lower=False, check_finite=False)


def cholesky_factor(G, rho) -> CholeskyFactor:
    G = np.asarray(G, dtype=np.float64)
    _check_finite(G, "G")
    if rho <= 0:
        raise ValueError("rho must be positive")
    M = G + rho * np.eye(G.shape[0])
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise CholeskyError(int(info))
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dpotrf")
    return CholeskyFactor(L)


def spd_solve(G, rho, rhs, factor=None):
    """Solve (G + rho I) X = rhs with one Cholesky factorization.

    Pass a cached ``factor`` from :func:`cholesky_factor` to skip the
    factorization.
    """
    if factor is None:
        factor = cholesky_factor(G, rho)
    return factor.solve(np.asarray(rhs, dtype=np.float64))


def gram_hadamard(factors, skip):
    """Hadamard product of Z_i^T Z_i over all i != skip."""
    ranks = {Z.shape[1] for Z in factors}
    if len(ranks) != 1:
        raise ValueError(f"factors disagree on column count: {sorted(ranks)}")
    R = ranks.pop()
    G = np.ones((R, R))
    for i, Z in enumerate(factors):
        if i != skip:
            G *= Z.T @ Z
    return G


def naive_khatri_rao(A, B):
    """Column-wise Kronecker product; reference implementation for tests."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ValueError("column counts differ")
    return np.column_stack([np.kron(A[:, r], B[:, r]) for r in range(A.shape[1])])
