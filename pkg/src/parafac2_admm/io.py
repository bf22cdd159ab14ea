"""Text formats for irregular tensors, visit-day sidecars and dense matrices.

Tensor file (whitespace delimited, 0-indexed)::

    %%IrregularTensor K J NNZ
    %%rows k I_k          (optional, before any entry of slice k)
    k i j v               (NNZ lines)

Without a ``%%rows`` directive I_k is 1 + the largest row index seen in
slice k. The sidecar ``<stem>.days`` holds lines ``k i t`` and must cover
every row of every slice.

Matrix file::

    %%Matrix rows cols
    v v v ...             (one line per row, 17 significant digits)
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .tensor import IrregularTensor, SparseSlice, TensorValidationError

TENSOR_HEADER = "%%IrregularTensor"
ROWS_DIRECTIVE = "%%rows"
MATRIX_HEADER = "%%Matrix"


class TensorFormatError(ValueError):
    """Malformed tensor, sidecar or matrix file; carries the line number."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        where = f"{path}:{lineno}" if lineno else str(path)
        super().__init__(f"{where}: {message}")


def days_path_for(path) -> Path:
    return Path(path).with_suffix(".days")


def _parse_int(token, path, lineno, what):
    try:
        return int(token)
    except ValueError:
        raise TensorFormatError(path, lineno, f"{what} must be an integer, got {token!r}") from None


def load_irregular_tensor(path, days_path=None) -> IrregularTensor:
    """Read a tensor file, attaching visit days when the sidecar exists.

    Parameters
    ----------
    path : str or Path
        Tensor file.
    days_path : str or Path, optional
        Explicit sidecar location. Defaults to ``path`` with a ``.days``
        suffix; a missing default sidecar is not an error.
    """
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()

    lineno = 0
    header = None
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            header = line.split()
            break
    if header is None or header[0] != TENSOR_HEADER or len(header) != 4:
        raise TensorFormatError(path, lineno or 1, f"expected '{TENSOR_HEADER} K J NNZ' header")
    K, J, nnz = (_parse_int(t, path, lineno, name) for t, name in zip(header[1:], "KJN"))
    if K < 0 or J < 0 or nnz < 0:
        raise TensorFormatError(path, lineno, "K, J and NNZ must be non-negative")

    declared = {}
    seen_entries = [False] * K
    entries = [([], [], []) for _ in range(K)]
    coords = [set() for _ in range(K)]
    count = 0
    for lineno in range(lineno + 1, len(lines) + 1):
        tokens = lines[lineno - 1].split()
        if not tokens:
            continue
        if tokens[0] == ROWS_DIRECTIVE:
            if len(tokens) != 3:
                raise TensorFormatError(path, lineno, "expected '%%rows k I_k'")
            k = _parse_int(tokens[1], path, lineno, "slice index")
            n = _parse_int(tokens[2], path, lineno, "row count")
            if not 0 <= k < K:
                raise TensorFormatError(path, lineno, f"slice index {k} out of range [0, {K})")
            if n < 0:
                raise TensorFormatError(path, lineno, "row count must be non-negative")
            if seen_entries[k]:
                raise TensorFormatError(path, lineno, f"%%rows for slice {k} after its entries")
            if k in declared:
                raise TensorFormatError(path, lineno, f"repeated %%rows for slice {k}")
            declared[k] = n
            continue
        if len(tokens) != 4:
            raise TensorFormatError(path, lineno, "expected 'k i j v'")
        k = _parse_int(tokens[0], path, lineno, "slice index")
        i = _parse_int(tokens[1], path, lineno, "row index")
        j = _parse_int(tokens[2], path, lineno, "column index")
        try:
            v = float(tokens[3])
        except ValueError:
            raise TensorFormatError(path, lineno, f"bad value {tokens[3]!r}") from None
        if not np.isfinite(v):
            raise TensorFormatError(path, lineno, "non-finite value")
        if not 0 <= k < K:
            raise TensorFormatError(path, lineno, f"slice index {k} out of range [0, {K})")
        if i < 0 or (k in declared and i >= declared[k]):
            bound = declared.get(k, "inf")
            raise TensorFormatError(path, lineno, f"row index {i} out of range [0, {bound})")
        if not 0 <= j < J:
            raise TensorFormatError(path, lineno, f"column index {j} out of range [0, {J})")
        if (i, j) in coords[k]:
            raise TensorFormatError(path, lineno, f"duplicate coordinate ({k}, {i}, {j})")
        coords[k].add((i, j))
        seen_entries[k] = True
        rows, cols, vals = entries[k]
        rows.append(i)
        cols.append(j)
        vals.append(v)
        count += 1
    if count != nnz:
        raise TensorFormatError(path, len(lines), f"header declares {nnz} entries, found {count}")

    slices = []
    for k in range(K):
        rows, cols, vals = entries[k]
        n_rows = declared.get(k, (max(rows) + 1) if rows else 0)
        slices.append(SparseSlice(n_rows, rows, cols, vals))

    explicit = days_path is not None
    days_path = Path(days_path) if explicit else days_path_for(path)
    if days_path.exists():
        _attach_days(slices, days_path)
    elif explicit:
        raise FileNotFoundError(f"timestamp sidecar not found: {days_path}")
    return IrregularTensor(J, slices)


def _attach_days(slices, path):
    days = [dict() for _ in slices]
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 3:
                raise TensorFormatError(path, lineno, "expected 'k i t'")
            k, i, t = (_parse_int(tok, path, lineno, name) for tok, name in zip(tokens, "kit"))
            if not 0 <= k < len(slices):
                raise TensorFormatError(path, lineno, f"slice index {k} out of range")
            if not 0 <= i < slices[k].n_rows:
                raise TensorFormatError(path, lineno, f"row index {i} out of range for slice {k}")
            if i in days[k]:
                raise TensorFormatError(path, lineno, f"repeated day for slice {k} row {i}")
            if t < 0:
                raise TensorFormatError(path, lineno, "visit day must be non-negative")
            if i > 0 and (i - 1) in days[k] and t <= days[k][i - 1]:
                raise TensorFormatError(path, lineno, f"non-increasing visit day in slice {k}")
            if (i + 1) in days[k] and t >= days[k][i + 1]:
                raise TensorFormatError(path, lineno, f"non-increasing visit day in slice {k}")
            days[k][i] = t
    for k, s in enumerate(slices):
        if len(days[k]) != s.n_rows:
            raise TensorFormatError(path, 0, f"sidecar does not cover every row of slice {k}")
        try:
            s.visit_days = np.array([days[k][i] for i in range(s.n_rows)], dtype=np.int64)
            s.__post_init__()
        except TensorValidationError as exc:
            raise TensorFormatError(path, 0, f"slice {k}: {exc}") from None


def save_irregular_tensor(tensor: IrregularTensor, path) -> None:
    """Write ``tensor`` and, when every slice carries visit days, its sidecar."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"{TENSOR_HEADER} {tensor.n_slices} {tensor.n_cols} {tensor.nnz}\n")
        for k, s in enumerate(tensor.slices):
            fh.write(f"{ROWS_DIRECTIVE} {k} {s.n_rows}\n")
        for k, s in enumerate(tensor.slices):
            for i, j, v in zip(s.rows.tolist(), s.cols.tolist(), s.vals.tolist()):
                fh.write(f"{k} {i} {j} {v:.17g}\n")
    if tensor.has_visit_days:
        with open(days_path_for(path), "w") as fh:
            for k, s in enumerate(tensor.slices):
                for i, t in enumerate(s.visit_days.tolist()):
                    fh.write(f"{k} {i} {t}\n")


def save_matrix(matrix, path) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    rows, cols = matrix.shape
    with open(path, "w") as fh:
        fh.write(f"{MATRIX_HEADER} {rows} {cols}\n")
        for row in matrix:
            fh.write(" ".join(f"{v:.17g}" for v in row.tolist()) + "\n")


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TensorFormatError(path, 1, "empty matrix file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != MATRIX_HEADER:
        raise TensorFormatError(path, 1, f"expected '{MATRIX_HEADER} rows cols' header")
    rows = _parse_int(header[1], path, 1, "rows")
    cols = _parse_int(header[2], path, 1, "cols")
    body = [(n, line.split()) for n, line in enumerate(lines[1:], start=2) if line.strip()]
    if len(body) != rows:
        raise TensorFormatError(path, len(lines), f"expected {rows} rows, found {len(body)}")
    out = np.empty((rows, cols))
    for r, (lineno, tokens) in enumerate(body):
        if len(tokens) != cols:
            raise TensorFormatError(path, lineno, f"expected {cols} values, found {len(tokens)}")
        try:
            out[r] = [float(t) for t in tokens]
        except ValueError:
            raise TensorFormatError(path, lineno, "bad value") from None
    return out


def _save_blocks(blocks, path, index_path, width=None):
    width = max((b.shape[1] for b in blocks), default=0) if width is None else width
    stacked = np.zeros((sum(b.shape[0] for b in blocks), width))
    index = np.zeros((len(blocks), 2))
    pos = 0
    for k, b in enumerate(blocks):
        stacked[pos : pos + b.shape[0], : b.shape[1]] = b
        index[k] = (pos, b.shape[0])
        pos += b.shape[0]
    save_matrix(stacked, path)
    save_matrix(index, index_path)


def _load_blocks(path, index_path):
    stacked = load_matrix(path)
    index = load_matrix(index_path).astype(np.int64)
    blocks = []
    for k, (pos, n) in enumerate(index):
        if pos < 0 or pos + n > stacked.shape[0]:
            raise TensorFormatError(index_path, k + 2, "block extends past the stacked matrix")
        blocks.append(stacked[pos : pos + n])
    return blocks


def save_model(model, directory, emit_u=False) -> None:
    """Write factor files for ``model`` into ``directory``.

    ``H.mtx``, ``W.mtx``, ``V.mtx``; the stacked Q_k in ``Q.mtx`` with
    ``Q_index.mtx`` holding (first row, row count) per slice; in smooth mode
    the stacked C_k (zero padded to the widest) in ``C.mtx``/``C_index.mtx``;
    and with ``emit_u`` the stacked U_k in ``U.mtx``/``U_index.mtx``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(model.H, directory / "H.mtx")
    save_matrix(model.W, directory / "W.mtx")
    save_matrix(model.V, directory / "V.mtx")
    _save_blocks(model.Q, directory / "Q.mtx", directory / "Q_index.mtx", model.rank)
    if model.projectors is not None:
        _save_blocks(model.projectors, directory / "C.mtx", directory / "C_index.mtx")
    if emit_u:
        U = [model.U(k) for k in range(model.n_slices)]
        _save_blocks(U, directory / "U.mtx", directory / "U_index.mtx", model.rank)


def load_model(directory):
    """Read a model written by :func:`save_model`."""
    from .solver import Parafac2Model

    directory = Path(directory)
    for name in ("H.mtx", "W.mtx", "V.mtx", "Q.mtx", "Q_index.mtx"):
        if not (directory / name).exists():
            raise FileNotFoundError(f"model file missing: {directory / name}")
    H = load_matrix(directory / "H.mtx")
    W = load_matrix(directory / "W.mtx")
    V = load_matrix(directory / "V.mtx")
    Q = _load_blocks(directory / "Q.mtx", directory / "Q_index.mtx")
    projectors = None
    if (directory / "C.mtx").exists():
        C = _load_blocks(directory / "C.mtx", directory / "C_index.mtx")
        projectors = [c[:, : q.shape[0]] for c, q in zip(C, Q)]
    return Parafac2Model(Q, H, W, V, projectors)
