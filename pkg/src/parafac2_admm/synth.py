"""Synthetic irregular tensors with a known PARAFAC2 ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .solver import Parafac2Model
from .tensor import IrregularTensor, SparseSlice

DROP_BELOW = 1e-12
MAX_GAP_DAYS = 30


@dataclass
class SynthConfig:
    K: int = 50
    J: int = 40
    rank: int = 5
    rows_min: int = 10
    rows_max: int = 20
    density: float = 0.3
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1 or self.K < 1 or self.J < 1:
            raise ValueError("K, J and rank must be >= 1")
        if self.rows_min < self.rank:
            raise ValueError(
                f"rows_min={self.rows_min} is below rank={self.rank}; "
                "cannot build orthonormal Q_k"
            )
        if self.rows_max < self.rows_min:
            raise ValueError("rows_max must be >= rows_min")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")


def _sparse_v(rng, J, R, density):
    """J x R non-negative matrix with exactly ceil(density * J * R) nonzeros.

    Every column receives at least one nonzero when the budget allows.
    """
    n_nonzero = math.ceil(density * J * R)
    mask = np.zeros(J * R, dtype=bool)
    if n_nonzero >= R:
        mask[rng.integers(0, J, size=R) * R + np.arange(R)] = True
    free = np.flatnonzero(~mask)
    mask[rng.choice(free, size=n_nonzero - mask.sum(), replace=False)] = True
    V = np.zeros(J * R)
    # values in (0, 1] so the support is exactly the mask
    V[mask] = 1.0 - rng.random(mask.sum())
    return V.reshape(J, R)


def generate_synthetic(cfg: SynthConfig, seed=None):
    """Draw a ground-truth model and the tensor it generates.

    X_k = Q_k H diag(W[k]) V^T, plus Gaussian noise of standard deviation
    ``noise_level`` on the nonzero support; entries with magnitude below
    1e-12 are dropped. Visit days are cumulative sums of random gaps in
    [1, 30] starting at day 0.

    Returns
    -------
    tensor : IrregularTensor
    truth : Parafac2Model
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    R, J, K = cfg.rank, cfg.J, cfg.K
    H = rng.random((R, R))
    V = _sparse_v(rng, J, R, cfg.density)
    W = rng.random((K, R))
    sizes = rng.integers(cfg.rows_min, cfg.rows_max + 1, size=K)
    Q, slices = [], []
    for k, I_k in enumerate(sizes):
        Qk, _ = np.linalg.qr(rng.standard_normal((I_k, R)))
        Q.append(Qk)
        X = (Qk @ H * W[k]) @ V.T
        support = np.abs(X) >= DROP_BELOW
        if cfg.noise_level > 0:
            X = X + cfg.noise_level * rng.standard_normal(X.shape) * support
        keep = support & (np.abs(X) >= DROP_BELOW)
        rows, cols = np.nonzero(keep)
        days = np.concatenate([[0], np.cumsum(rng.integers(1, MAX_GAP_DAYS + 1, size=I_k - 1))])
        slices.append(SparseSlice(I_k, rows, cols, X[rows, cols], visit_days=days))
    return IrregularTensor(J, slices), Parafac2Model(Q, H, W, V)
