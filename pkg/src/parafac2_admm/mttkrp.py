"""Slice-wise MTTKRP for the implicit tensor Y with slices Y_k = Q_k^T X_k.

Y is R x J x K and is never formed. Modes follow the CP model
Y ~ [H; V; W]: mode 1 updates H, mode 2 updates V, mode 3 updates W.

All slices are kept stacked: ``X`` is a (sum I_k) x J CSR matrix and ``Q``
the matching (sum I_k) x R dense matrix, with ``offsets`` delimiting the
row block of each slice. The sparse X is always multiplied first by a thin
dense operand, so no intermediate exceeds max(sum I_k, J) x R and no
Khatri-Rao product is ever built.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass
class ImplicitY:
    """Handle over stacked slices ``X`` and orthonormal factors ``Q``."""

    X: sp.csr_matrix
    Q: np.ndarray
    offsets: np.ndarray
    n_rank_deficient: int = 0

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if self.X.shape[0] != self.Q.shape[0] or self.offsets[-1] != self.Q.shape[0]:
            raise ValueError(
                f"row mismatch: X has {self.X.shape[0]} rows, Q has {self.Q.shape[0]}, "
                f"offsets end at {self.offsets[-1]}"
            )

    @classmethod
    def from_slices(cls, X_slices, Q_slices):
        n_cols = X_slices[0].shape[1] if X_slices else 0
        X = sp.vstack([sp.csr_matrix(x) for x in X_slices], format="csr") if X_slices else sp.csr_matrix((0, n_cols))
        rank = Q_slices[0].shape[1] if Q_slices else 0
        for k, (x, q) in enumerate(zip(X_slices, Q_slices)):
            if x.shape[0] != q.shape[0] or q.shape[1] != rank:
                raise ValueError(f"slice {k}: X_k is {x.shape}, Q_k is {q.shape}")
        Q = np.vstack(Q_slices) if Q_slices else np.zeros((0, rank))
        offsets = np.concatenate([[0], np.cumsum([q.shape[0] for q in Q_slices])])
        return cls(X, Q, offsets)

    @property
    def n_slices(self):
        return self.offsets.size - 1

    @property
    def rank(self):
        return self.Q.shape[1]

    @property
    def n_cols(self):
        return self.X.shape[1]

    @cached_property
    def XT(self):
        return self.X.T.tocsr()

    @cached_property
    def row_slice(self):
        return np.repeat(np.arange(self.n_slices), np.diff(self.offsets))

    @cached_property
    def workspace(self):
        """Two reusable (sum I_k) x R buffers.

        Fresh arrays of this size are page-faulted on every call, which
        costs as much as the arithmetic. Thread chunks touch disjoint rows.
        """
        return np.empty_like(self.Q), np.empty_like(self.Q)

    def slice_y(self, k):
        """Dense Y_k = Q_k^T X_k (R x J)."""
        lo, hi = self.offsets[k], self.offsets[k + 1]
        return np.asarray((self.X[lo:hi].T @ self.Q[lo:hi]).T)


def _segment_sum(rows, offsets):
    """Sum consecutive row blocks of ``rows`` delimited by ``offsets``."""
    n = rows.shape[0]
    K = offsets.size - 1
    starts = offsets[:-1] - offsets[0]
    if K and np.all(np.diff(offsets) > 0):
        return np.add.reduceat(rows, starts, axis=0)
    # empty blocks: reduceat would copy the next row instead of summing nothing
    indicator = sp.csr_matrix((np.ones(n), np.arange(n), offsets - offsets[0]), shape=(K, n))
    flat = rows.reshape(n, -1)
    return np.asarray(indicator @ flat).reshape((K,) + rows.shape[1:])


def _chunk_contribution(y, lo, hi, mode, H, V, W):
    """MTTKRP contribution of slices ``lo..hi-1``."""
    r0, r1 = y.offsets[lo], y.offsets[hi]
    whole = lo == 0 and hi == y.n_slices
    X = y.X if whole else y.X[r0:r1]
    Q = y.Q[r0:r1]
    offsets = y.offsets[lo : hi + 1]
    buf_a, buf_b = (b[r0:r1] for b in y.workspace)
    if mode == 2:
        # sum_k X_k^T (Q_k H) diag(W[k])
        XT = y.XT if whole else X.T.tocsr()
        np.matmul(Q, H, out=buf_a)
        buf_a *= np.take(W, y.row_slice[r0:r1], axis=0, out=buf_b, mode="clip")
        return np.asarray(XT @ buf_a)
    XV = np.asarray(X @ V)
    if mode == 1:
        # sum_k Q_k^T (X_k V) diag(W[k])
        XV *= np.take(W, y.row_slice[r0:r1], axis=0, out=buf_a, mode="clip")
        return Q.T @ XV
    # F[k, r] = H[:, r]^T Q_k^T X_k V[:, r]
    XV *= np.matmul(Q, H, out=buf_a)
    return _segment_sum(XV, offsets)


def slicewise_mttkrp(y: ImplicitY, mode, H, V, W, threads=1, deterministic=True):
    """Return Y_(mode) times the Khatri-Rao product of the other factors.

    Parameters
    ----------
    y : ImplicitY
    mode : {1, 2, 3}
        1 -> H (R x R result), 2 -> V (J x R), 3 -> W (K x R).
    H, V, W : ndarray
        Current factors, shapes R x R, J x R, K x R.
    threads : int
        Slices are split into contiguous chunks processed concurrently.
    deterministic : bool
        Combine chunk partial sums in ascending slice order. Otherwise
        partial sums are added as they complete, which changes rounding.
    """
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    R = y.rank
    K = y.n_slices
    if H.shape != (R, R) or V.shape != (y.n_cols, R) or W.shape != (K, R):
        raise ValueError(
            f"factor shapes H{H.shape} V{V.shape} W{W.shape} inconsistent with "
            f"R={R}, J={y.n_cols}, K={K}"
        )
    threads = max(1, min(int(threads), K)) if K else 1
    if threads == 1:
        F = _chunk_contribution(y, 0, K, mode, H, V, W)
    else:
        bounds = np.linspace(0, K, threads + 1).astype(int)
        chunks = list(zip(bounds[:-1], bounds[1:]))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_chunk_contribution, y, lo, hi, mode, H, V, W) for lo, hi in chunks]
            if mode == 3:
                F = np.vstack([f.result() for f in futures])
            elif deterministic:
                F = futures[0].result().copy()
                for f in futures[1:]:
                    F += f.result()
            else:
                F = None
                for f in as_completed(futures):
                    F = f.result().copy() if F is None else F + f.result()
    if not np.all(np.isfinite(F)):
        raise FloatingPointError(f"non-finite MTTKRP accumulation in mode {mode}")
    return F
