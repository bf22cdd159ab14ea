"""Irregular sparse tensors: K sparse slices sharing a column dimension."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class TensorValidationError(ValueError):
    """Raised when a slice or tensor violates its structural invariants."""


@dataclass(eq=False)
class SparseSlice:
    """One slice X_k in coordinate form.

    Entries are stored sorted by (row, column); the constructor canonicalizes
    the order so that two slices holding the same entries compare equal and
    reductions over entries are order independent.

    Parameters
    ----------
    n_rows : int
        Number of rows I_k.
    rows, cols : array of int
        Coordinates of the stored entries (0-indexed).
    vals : array of float
        Values of the stored entries.
    visit_days : array of int, optional
        Day offset of each row; strictly increasing and non-negative.
    """

    n_rows: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    visit_days: np.ndarray | None = None

    def __post_init__(self):
        self.n_rows = int(self.n_rows)
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise TensorValidationError("rows, cols and vals must have equal length")
        if self.n_rows < 0:
            raise TensorValidationError("n_rows must be non-negative")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n_rows):
            raise TensorValidationError(f"row index out of range [0, {self.n_rows})")
        if cols.size and cols.min() < 0:
            raise TensorValidationError("negative column index")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise TensorValidationError(f"duplicate coordinate ({rows[i]}, {cols[i]})")
        self.rows, self.cols, self.vals = rows, cols, vals
        if self.visit_days is not None:
            days = np.asarray(self.visit_days, dtype=np.int64).ravel()
            if days.size != self.n_rows:
                raise TensorValidationError(
                    f"visit_days has {days.size} entries for {self.n_rows} rows"
                )
            if days.size and days[0] < 0:
                raise TensorValidationError("visit_days must be non-negative")
            if np.any(np.diff(days) <= 0):
                raise TensorValidationError("visit_days must be strictly increasing")
            self.visit_days = days

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    def to_csr(self, n_cols: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n_rows, n_cols))

    def to_dense(self, n_cols: int) -> np.ndarray:
        out = np.zeros((self.n_rows, n_cols))
        out[self.rows, self.cols] = self.vals
        return out

    def __eq__(self, other):
        if not isinstance(other, SparseSlice):
            return NotImplemented
        if self.n_rows != other.n_rows:
            return False
        if (self.visit_days is None) != (other.visit_days is None):
            return False
        if self.visit_days is not None and not np.array_equal(self.visit_days, other.visit_days):
            return False
        return (
            np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
        )


@dataclass(eq=False)
class IrregularTensor:
    """K sparse slices of varying row count sharing ``n_cols`` columns."""

    n_cols: int
    slices: list[SparseSlice] = field(default_factory=list)

    def __post_init__(self):
        self.n_cols = int(self.n_cols)
        self.slices = list(self.slices)
        for k, s in enumerate(self.slices):
            if s.cols.size and s.cols.max() >= self.n_cols:
                raise TensorValidationError(
                    f"slice {k}: column index {s.cols.max()} out of range [0, {self.n_cols})"
                )

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def nnz(self) -> int:
        return sum(s.nnz for s in self.slices)

    @property
    def row_counts(self) -> np.ndarray:
        return np.array([s.n_rows for s in self.slices], dtype=np.int64)

    @property
    def has_visit_days(self) -> bool:
        return bool(self.slices) and all(s.visit_days is not None for s in self.slices)

    @cached_property
    def stacked(self) -> sp.csr_matrix:
        """All slices stacked vertically as one (sum I_k) x J CSR matrix."""
        return stack_rows([s.to_csr(self.n_cols) for s in self.slices], self.n_cols)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.row_counts)]).astype(np.int64)

    def csr(self, k: int) -> sp.csr_matrix:
        return self.stacked[self.offsets[k] : self.offsets[k + 1]]

    def __eq__(self, other):
        if not isinstance(other, IrregularTensor):
            return NotImplemented
        return (
            self.n_cols == other.n_cols
            and self.n_slices == other.n_slices
            and all(a == b for a, b in zip(self.slices, other.slices))
        )


def stack_rows(blocks, n_cols):
    if not blocks:
        return sp.csr_matrix((0, n_cols))
    return sp.vstack(blocks, format="csr")


def frobenius_norm_sq(tensor: IrregularTensor) -> float:
    """Return sum_k ||X_k||_F^2."""
    return float(sum(np.dot(s.vals, s.vals) for s in tensor.slices))
