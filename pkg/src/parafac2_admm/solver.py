"""Constrained PARAFAC2 by alternating Procrustes and AO-ADMM updates.

Each outer iteration
  1. sets every Q_k to the polar factor of X_k V S_k H^T, and
  2. treats Y_k = Q_k^T X_k as a CP problem [H; V; W] and updates H, W, V
     in turn, each by a few ADMM iterations with its own constraint.

The ADMM inner loop uses the scaled form

    Z   <- (G + rho I)^{-1} (F + rho (Zbar + D))       (F, G fixed per call)
    Zbar <- prox(Z - D)
    D   <- D + Zbar - Z

with rho = trace(G) / R. Zbar is the factor of record, so hard constraints
hold exactly on every returned factor. Zbar and D persist across outer
iterations.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import cholesky_factor, gram_hadamard, polar_rows
from .mttkrp import ImplicitY, _segment_sum, slicewise_mttkrp
from .prox import ConstraintKind, prox_apply
from .spline import DEFAULT_DEGREE, SplineError, build_basis
from .tensor import IrregularTensor, frobenius_norm_sq

log = logging.getLogger(__name__)

FACTORS = ("H", "W", "V")
# factor name -> MTTKRP mode of the R x J x K tensor Y ~ [H; V; W]
MTTKRP_MODE = {"H": 1, "V": 2, "W": 3}
DIVERGENCE_GROWTH = 1e6


class Parafac2Error(ValueError):
    """Invalid problem setup (shapes, ranks, missing timestamps)."""


class SolverDivergenceError(FloatingPointError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class Parafac2Model:
    """Factors of X_k ~ U_k diag(W[k]) V^T with U_k = Q_k H (or C_k Q_k H).

    ``Q`` holds one orthonormal-column matrix per slice. In smooth mode
    ``projectors`` holds C_k and each Q_k has rank(C_k) rows.
    """

    Q: list
    H: np.ndarray
    W: np.ndarray
    V: np.ndarray
    projectors: list | None = None

    @property
    def rank(self):
        return self.H.shape[1]

    @property
    def n_slices(self):
        return len(self.Q)

    def U(self, k):
        U = self.Q[k] @ self.H
        if self.projectors is not None:
            U = self.projectors[k] @ U
        return U

    def S(self, k):
        return np.diag(self.W[k])

    def orthonormality_error(self):
        eye = np.eye(self.rank)
        return max((np.linalg.norm(Q.T @ Q - eye) for Q in self.Q), default=0.0)

    def cross_product_error(self):
        """max_k ||U_k^T U_k - H^T H||_F / ||H^T H||_F."""
        HtH = self.H.T @ self.H
        scale = np.linalg.norm(HtH)
        if scale == 0:
            scale = 1.0
        return max(
            (np.linalg.norm(self.U(k).T @ self.U(k) - HtH) / scale for k in range(self.n_slices)),
            default=0.0,
        )


@dataclass
class Smoothness:
    n_basis: int
    degree: int = DEFAULT_DEGREE
    gap_aware: bool = True


@dataclass
class ConstraintSpec:
    on_H: ConstraintKind = field(default_factory=ConstraintKind.none)
    on_W: ConstraintKind = field(default_factory=ConstraintKind.none)
    on_V: ConstraintKind = field(default_factory=ConstraintKind.none)
    smoothness: Smoothness | None = None

    def for_factor(self, name):
        return getattr(self, f"on_{name}")


@dataclass
class FitOptions:
    """Solver settings.

    ``recompute_cached`` is a debugging switch that recomputes the MTTKRP
    and the Cholesky factor on every inner ADMM iteration instead of once
    per mode update.
    """

    rank: int
    max_outer_iters: int = 100
    outer_tol: float = 1e-4
    admm_max_iters: int = 10
    admm_tol: float = 1e-3
    seed: int = 0
    threads: int = 1
    deterministic: bool = True
    recompute_cached: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise Parafac2Error("rank must be >= 1")
        if self.outer_tol <= 0 or self.admm_tol <= 0:
            raise Parafac2Error("tolerances must be positive")
        if self.max_outer_iters < 1 or self.admm_max_iters < 1:
            raise Parafac2Error("iteration caps must be >= 1")
        if self.threads < 1:
            raise Parafac2Error("threads must be >= 1")


@dataclass
class AdmmState:
    """Auxiliary factor, scaled dual variable and last step size of one factor."""

    aux: np.ndarray
    dual: np.ndarray
    rho: float = 0.0

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class IterationRecord:
    iteration: int
    fit: float
    seconds: float
    inner_iters: dict
    primal_residual: dict
    dual_residual: dict
    rank_deficient: int = 0


@dataclass
class FitTrace:
    records: list = field(default_factory=list)
    converged: bool = False

    @property
    def fits(self):
        return [r.fit for r in self.records]

    @property
    def n_iters(self):
        return len(self.records)

    @property
    def final_fit(self):
        return self.records[-1].fit if self.records else float("nan")

    def to_dict(self, include_timing=True):
        iterations = []
        for r in self.records:
            d = asdict(r)
            if not include_timing:
                d.pop("seconds")
            iterations.append(d)
        return {"converged": self.converged, "iterations": iterations}

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2)


# ---------------------------------------------------------------- data prep


@dataclass
class _Working:
    """Stacked (possibly projected) slices the solver iterates on."""

    X: sp.csr_matrix
    offsets: np.ndarray
    norm_sq: float  # of the original tensor
    discarded: float  # energy outside the smooth subspaces
    projectors: list | None = None


def _check_ranks(tensor, rank):
    small = [(k, s.n_rows) for k, s in enumerate(tensor.slices) if s.n_rows < rank]
    if small:
        listing = ", ".join(f"slice {k} (I_k={n})" for k, n in small[:20])
        more = f" and {len(small) - 20} more" if len(small) > 20 else ""
        raise Parafac2Error(f"rank {rank} exceeds the row count of {len(small)} slices: {listing}{more}")


def smooth_projectors(tensor: IrregularTensor, smoothness: Smoothness):
    """Per-slice orthonormal bases C_k of the spline column spaces."""
    if smoothness.gap_aware and not tensor.has_visit_days:
        raise Parafac2Error("gap-aware smoothness requires visit days for every slice")
    out = []
    for k, s in enumerate(tensor.slices):
        try:
            _, sbm = build_basis(
                s.visit_days,
                smoothness.n_basis,
                smoothness.degree,
                gap_aware=smoothness.gap_aware,
                n_rows=s.n_rows,
            )
        except SplineError as exc:
            raise Parafac2Error(f"slice {k}: {exc}") from None
        out.append(sbm.left_orthonormal)
    return out


def _prepare(tensor: IrregularTensor, spec: ConstraintSpec, rank):
    if tensor.n_slices == 0:
        raise Parafac2Error("tensor has no slices")
    _check_ranks(tensor, rank)
    norm_sq = frobenius_norm_sq(tensor)
    if norm_sq == 0:
        raise Parafac2Error("tensor has zero norm")
    if spec.smoothness is None:
        return _Working(tensor.stacked, tensor.offsets, norm_sq, 0.0)
    projectors = smooth_projectors(tensor, spec.smoothness)
    low = [(k, C.shape[1]) for k, C in enumerate(projectors) if C.shape[1] < rank]
    if low:
        listing = ", ".join(f"slice {k} (basis rank {r})" for k, r in low[:20])
        raise Parafac2Error(f"rank {rank} exceeds the spline basis rank of slices: {listing}")
    blocks = [sp.csr_matrix((tensor.csr(k).T @ C).T) for k, C in enumerate(projectors)]
    X = sp.vstack(blocks, format="csr")
    offsets = np.concatenate([[0], np.cumsum([C.shape[1] for C in projectors])]).astype(np.int64)
    discarded = norm_sq - float(X.multiply(X).sum())
    return _Working(X, offsets, norm_sq, discarded, projectors)


# ---------------------------------------------------------------- updates


def _as_stack(data):
    if isinstance(data, IrregularTensor):
        return data.stacked, data.offsets
    return data.X, data.offsets


def _polar_chunk(X, V, H, w_rows, offsets):
    A = (np.asarray(X @ V) * w_rows) @ H.T
    return polar_rows(A, offsets - offsets[0])


def update_orthogonal_factors(data, H, W, V, threads=1):
    """Procrustes update of every Q_k.

    Parameters
    ----------
    data : IrregularTensor or ImplicitY
        Slices X_k (or their projections, supplied as an ImplicitY whose Q
        is ignored).
    H, W, V : ndarray

    Returns
    -------
    Q : list of ndarray
        Q_k = polar factor of X_k V diag(W[k]) H^T.
    y : ImplicitY
        Handle over {X_k, Q_k}; ``y.n_rank_deficient`` counts slices whose
        Procrustes input was rank deficient.
    """
    X, offsets = _as_stack(data)
    R = H.shape[0]
    sizes = np.diff(offsets)
    small = np.flatnonzero(sizes < R)
    if small.size:
        raise Parafac2Error(f"slices {small[:20].tolist()} have fewer than R={R} rows")
    K = sizes.size
    w_rows = np.repeat(W, sizes, axis=0)
    threads = max(1, min(int(threads), K))
    if threads == 1:
        Q, n_def = _polar_chunk(X, V, H, w_rows, offsets)
    else:
        bounds = np.linspace(0, K, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = []
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                r0, r1 = offsets[lo], offsets[hi]
                futures.append(
                    pool.submit(_polar_chunk, X[r0:r1], V, H, w_rows[r0:r1], offsets[lo : hi + 1])
                )
            parts = [f.result() for f in futures]
        Q = np.vstack([p[0] for p in parts])
        n_def = sum(p[1] for p in parts)
    y = ImplicitY(X, Q, offsets)
    y.n_rank_deficient = int(n_def)
    return np.split(Q, offsets[1:-1]), y


def _factor_list(H, W, V):
    # order matching MTTKRP modes 1, 2, 3
    return [H, V, W]


def _relative(num, *denoms):
    for d in denoms:
        if d > 0:
            return num / d
    return num


def admm_update_mode(name, y, factors, constraint, state, opts, threads=1, deterministic=True):
    """Run the inner ADMM loop for factor ``name`` ("H", "W" or "V").

    Parameters
    ----------
    name : str
    y : ImplicitY
    factors : dict
        Current ``{"H": H, "W": W, "V": V}``.
    constraint : ConstraintKind
    state : AdmmState
        Warm-start auxiliary and dual variables, updated in place.
    opts : FitOptions

    Returns
    -------
    factor : ndarray
        The auxiliary variable Zbar, i.e. the constrained factor.
    info : dict
        ``inner_iters``, ``primal`` and ``dual`` relative residuals.
    """
    H, W, V = factors["H"], factors["W"], factors["V"]
    mode = MTTKRP_MODE[name]
    R = H.shape[1]

    def cached_terms():
        G = gram_hadamard(_factor_list(H, W, V), mode - 1)
        F = slicewise_mttkrp(y, mode, H, V, W, threads=threads, deterministic=deterministic)
        rho = float(np.trace(G)) / R
        if not rho > 0:
            # all other factors vanished; any positive step solves the trivial problem
            rho = 1.0
        return G, F, rho, cholesky_factor(G, rho)

    G, F, rho, chol = cached_terms()
    state.rho = rho
    aux, dual = state.aux, state.dual
    if aux.shape != F.shape:
        raise Parafac2Error(f"ADMM state for {name} has shape {aux.shape}, expected {F.shape}")
    first_primal = None
    primal = dual_res = np.inf
    it = 0
    for it in range(1, opts.admm_max_iters + 1):
        if opts.recompute_cached:
            G, F, rho, chol = cached_terms()
        Z = chol.solve((F + rho * (aux + dual)).T).T
        aux_prev = aux
        aux = prox_apply(constraint, Z - dual, rho)
        dual = dual + aux - Z

        r_abs = np.linalg.norm(aux - Z)
        if not np.isfinite(r_abs) or not np.all(np.isfinite(Z)):
            raise SolverDivergenceError(f"non-finite ADMM iterate for {name} at inner iteration {it}")
        if first_primal is None:
            first_primal = r_abs
        elif first_primal > 0 and r_abs > DIVERGENCE_GROWTH * first_primal:
            raise SolverDivergenceError(
                f"ADMM primal residual for {name} grew from {first_primal:.3g} to {r_abs:.3g}"
            )
        aux_norm = np.linalg.norm(aux)
        primal = _relative(r_abs, aux_norm, np.linalg.norm(Z))
        dual_res = _relative(np.linalg.norm(aux - aux_prev), np.linalg.norm(dual), aux_norm)
        if primal < opts.admm_tol and dual_res < opts.admm_tol:
            break
    state.aux, state.dual = aux, dual
    return aux, {"inner_iters": it, "primal": float(primal), "dual": float(dual_res)}


# ---------------------------------------------------------------- metrics


def _stacked_u(model):
    return np.vstack([model.U(k) for k in range(model.n_slices)])


def _residual_sq(X, offsets, U, W, V):
    """sum_k ||X_k - U_k diag(W[k]) V^T||^2 without densifying X_k."""
    sizes = np.diff(offsets)
    US = U * np.repeat(W, sizes, axis=0)
    coo = X.tocoo()
    data_sq = float(np.dot(coo.data, coo.data))
    cross = float(np.dot(coo.data, np.einsum("nr,nr->n", US[coo.row], V[coo.col])))
    gram_u = _segment_sum(U[:, :, None] * U[:, None, :], offsets)
    model_sq = float(np.einsum("kab,ka,kb,ab->", gram_u, W, W, V.T @ V))
    return data_sq - 2.0 * cross + model_sq


def compute_fit(model: Parafac2Model, tensor: IrregularTensor) -> float:
    """FIT = 1 - sum_k ||X_k - U_k S_k V^T||^2 / sum_k ||X_k||^2."""
    if model.n_slices != tensor.n_slices:
        raise Parafac2Error(f"model has {model.n_slices} slices, tensor has {tensor.n_slices}")
    if model.V.shape[0] != tensor.n_cols:
        raise Parafac2Error(f"V has {model.V.shape[0]} rows, tensor has J={tensor.n_cols}")
    U = _stacked_u(model)
    if U.shape[0] != tensor.offsets[-1]:
        raise Parafac2Error("U_k row counts do not match the tensor slices")
    norm_sq = frobenius_norm_sq(tensor)
    if norm_sq == 0:
        raise Parafac2Error("FIT undefined for a zero-norm tensor")
    resid = _residual_sq(tensor.stacked, tensor.offsets, U, model.W, model.V)
    return 1.0 - resid / norm_sq


def compute_sparsity(V) -> float:
    """Fraction of entries exactly equal to zero."""
    V = np.asarray(V)
    if V.size == 0:
        return 0.0
    return float(np.count_nonzero(V == 0)) / V.size


def reconstruct_slice(model: Parafac2Model, k) -> np.ndarray:
    if not 0 <= k < model.n_slices:
        raise IndexError(f"slice {k} out of range [0, {model.n_slices})")
    return (model.U(k) * model.W[k]) @ model.V.T


# ---------------------------------------------------------------- driver


def _model_from(y, H, W, V, projectors):
    Q = np.split(y.Q.copy(), y.offsets[1:-1])
    return Parafac2Model(Q, H.copy(), W.copy(), V.copy(), projectors)


def fit(tensor: IrregularTensor, spec: ConstraintSpec, opts: FitOptions, callback=None):
    """Fit a constrained PARAFAC2 model.

    Parameters
    ----------
    tensor : IrregularTensor
    spec : ConstraintSpec
    opts : FitOptions
    callback : callable, optional
        Called as ``callback(iteration, model)`` after every outer iteration.

    Returns
    -------
    model : Parafac2Model
    trace : FitTrace
        ``trace.converged`` is False when ``max_outer_iters`` was reached
        before the relative FIT change fell below ``outer_tol``.
    """
    R = opts.rank
    work = _prepare(tensor, spec, R)
    K, J = tensor.n_slices, tensor.n_cols
    rng = np.random.default_rng(opts.seed)
    H = rng.random((R, R))
    V = rng.random((J, R))
    W = rng.random((K, R))
    states = {"H": AdmmState.zeros((R, R)), "W": AdmmState.zeros((K, R)), "V": AdmmState.zeros((J, R))}
    stack = ImplicitY(work.X, np.zeros((work.X.shape[0], R)), work.offsets)

    trace = FitTrace()
    prev_fit = None
    y = None
    start = time.perf_counter()
    for iteration in range(1, opts.max_outer_iters + 1):
        _, y = update_orthogonal_factors(stack, H, W, V, threads=opts.threads)
        factors = {"H": H, "W": W, "V": V}
        inner, primal, dual = {}, {}, {}
        for name in FACTORS:
            factors[name], info = admm_update_mode(
                name,
                y,
                factors,
                spec.for_factor(name),
                states[name],
                opts,
                threads=opts.threads,
                deterministic=opts.deterministic,
            )
            inner[name] = info["inner_iters"]
            primal[name] = info["primal"]
            dual[name] = info["dual"]
        H, W, V = factors["H"], factors["W"], factors["V"]

        resid = _residual_sq(y.X, y.offsets, y.Q @ H, W, V) + work.discarded
        fit_value = 1.0 - resid / work.norm_sq
        trace.records.append(
            IterationRecord(
                iteration,
                fit_value,
                time.perf_counter() - start,
                inner,
                primal,
                dual,
                y.n_rank_deficient,
            )
        )
        if not np.isfinite(fit_value):
            raise SolverDivergenceError(f"non-finite FIT at outer iteration {iteration}", trace)
        log.debug("iteration %d fit %.10f inner %s", iteration, fit_value, inner)
        if callback is not None:
            callback(iteration, _model_from(y, H, W, V, work.projectors))
        if prev_fit is not None and abs(fit_value - prev_fit) < opts.outer_tol * max(abs(prev_fit), 1.0):
            trace.converged = True
            break
        prev_fit = fit_value

    return _model_from(y, H, W, V, work.projectors), trace
