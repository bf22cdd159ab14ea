"""Element-wise proximal operators for the factor constraints."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConstraintKind:
    """One factor constraint.

    ``kind`` is one of ``"none"``, ``"non_negative"``, ``"l0"`` or ``"l1"``.
    ``l0`` takes the hard threshold ``mu`` directly (entries with x**2 < mu
    are zeroed); ``l1`` takes the penalty weight ``lam`` and shrinks by
    ``lam / rho``.
    """

    kind: str = "none"
    mu: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "non_negative", "l0", "l1"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "l0" and not (self.mu is not None and self.mu > 0):
            raise ValueError("l0 needs mu > 0")
        if self.kind == "l1" and not (self.lam is not None and self.lam >= 0):
            raise ValueError("l1 needs lam >= 0")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def non_negative(cls):
        return cls("non_negative")

    @classmethod
    def l0(cls, mu):
        return cls("l0", mu=float(mu))

    @classmethod
    def l1(cls, lam):
        return cls("l1", lam=float(lam))

    def __str__(self):
        if self.kind == "l0":
            return f"l0(mu={self.mu:g})"
        if self.kind == "l1":
            return f"l1(lambda={self.lam:g})"
        return self.kind


def prox_apply(kind: ConstraintKind, M, rho):
    """Proximal map of the constraint at ``M`` with step ``rho``.

    Returns argmin_Z c(Z) + rho/2 ||Z - M||_F^2. For ``l0`` the boundary
    x**2 == mu keeps x.
    """
    M = np.asarray(M, dtype=np.float64)
    if rho <= 0:
        raise ValueError("rho must be positive")
    if not np.all(np.isfinite(M)):
        raise ValueError("proximal input contains non-finite values")
    if kind.kind == "none":
        return M.copy()
    if kind.kind == "non_negative":
        return np.maximum(M, 0.0)
    if kind.kind == "l0":
        return np.where(M * M < kind.mu, 0.0, M)
    shift = kind.lam / rho
    return np.sign(M) * np.maximum(np.abs(M) - shift, 0.0)

