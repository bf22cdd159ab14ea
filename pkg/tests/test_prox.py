import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from parafac2_admm.prox import ConstraintKind, prox_apply

GRID = np.linspace(-10.0, 10.0, 1_000_001)
GRID_STEP = GRID[1] - GRID[0]


def grid_penalty(kind, z, rho):
    if kind.kind == "none":
        return np.zeros_like(z)
    if kind.kind == "non_negative":
        return np.where(z < 0, np.inf, 0.0)
    if kind.kind == "l0":
        # lambda ||z||_0 with mu = 2 lambda / rho
        return np.where(z != 0, 0.5 * rho * kind.mu, 0.0)
    return kind.lam * np.abs(z)


def grid_minimizer(kind, x, rho):
    obj = grid_penalty(kind, GRID, rho) + 0.5 * rho * (GRID - x) ** 2
    return GRID[np.argmin(obj)]


def test_non_negative_clamp():
    np.testing.assert_array_equal(prox_apply(ConstraintKind.non_negative(), [-1, 0, 2.5], 1.0), [0, 0, 2.5])


def test_l0_threshold_boundary_kept():
    out = prox_apply(ConstraintKind.l0(0.25), [0.4, 0.5, -0.6, 0.1], 3.0)
    np.testing.assert_array_equal(out, [0, 0.5, -0.6, 0])


def test_l1_soft_threshold():
    out = prox_apply(ConstraintKind.l1(0.4), [0.5, -0.1, -0.9], 2.0)
    np.testing.assert_allclose(out, [0.3, 0, -0.7], atol=1e-15)


def test_none_is_identity(rng):
    M = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(prox_apply(ConstraintKind.none(), M, 0.7), M)


@pytest.mark.parametrize(
    "kind",
    [ConstraintKind.none(), ConstraintKind.non_negative(), ConstraintKind.l0(0.8), ConstraintKind.l1(1.3)],
    ids=str,
)
def test_matches_grid_minimizer(rng, kind):
    rho = 1.7
    M = rng.uniform(-3, 3, size=(20, 5))
    out = prox_apply(kind, M, rho)
    for x, z in zip(M.ravel()[:25], out.ravel()[:25]):
        assert abs(z - grid_minimizer(kind, x, rho)) <= GRID_STEP


def test_invalid_kinds():
    with pytest.raises(ValueError):
        ConstraintKind("simplex")
    with pytest.raises(ValueError):
        ConstraintKind.l0(0)
    with pytest.raises(ValueError):
        ConstraintKind.l1(-1)
    with pytest.raises(ValueError):
        prox_apply(ConstraintKind.none(), [1.0], 0.0)
    with pytest.raises(ValueError):
        prox_apply(ConstraintKind.none(), [np.nan], 1.0)


matrices = arrays(np.float64, (4, 3), elements=st.floats(-50, 50, allow_nan=False))
rhos = st.floats(0.01, 100)
kinds = st.sampled_from(["none", "non_negative", "l0", "l1"])


def make(kind, param):
    if kind == "l0":
        return ConstraintKind.l0(param)
    if kind == "l1":
        return ConstraintKind.l1(param)
    return ConstraintKind(kind)


@settings(max_examples=200, deadline=None)
@given(matrices, rhos, st.sampled_from(["none", "non_negative", "l0"]), st.floats(0.01, 10))
def test_idempotent(M, rho, kind, param):
    c = make(kind, param)
    once = prox_apply(c, M, rho)
    np.testing.assert_array_equal(prox_apply(c, once, rho), once)


@settings(max_examples=200, deadline=None)
@given(matrices, rhos, st.floats(0, 10))
def test_l1_support_shrinks(M, rho, lam):
    c = ConstraintKind.l1(lam)
    once = prox_apply(c, M, rho)
    twice = prox_apply(c, once, rho)
    assert np.all((twice != 0) <= (once != 0))


@settings(max_examples=200, deadline=None)
@given(matrices, matrices, rhos, st.sampled_from(["non_negative", "l1"]), st.floats(0, 10))
def test_non_expansive(A, B, rho, kind, param):
    c = make(kind, param)
    diff = np.abs(prox_apply(c, A, rho) - prox_apply(c, B, rho))
    assert np.all(diff <= np.abs(A - B) + 1e-12)


@settings(max_examples=200, deadline=None)
@given(matrices, rhos, st.floats(0.01, 100))
def test_l0_keeps_or_zeros(M, rho, mu):
    out = prox_apply(ConstraintKind.l0(mu), M, rho)
    assert np.all((out == 0) | (out == M))
