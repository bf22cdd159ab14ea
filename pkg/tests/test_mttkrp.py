import numpy as np
import pytest
import scipy.sparse as sp
from conftest import random_orthonormal
from oracles import naive_mttkrp

from parafac2_admm.mttkrp import ImplicitY, slicewise_mttkrp


def random_instance(rng, K=5, max_rows=8, J=12, R=4, density=0.3):
    X, Q = [], []
    for _ in range(K):
        n = int(rng.integers(R, max_rows + 1))
        X.append(sp.random(n, J, density=density, random_state=rng, format="csr"))
        Q.append(random_orthonormal(rng, n, R))
    H = rng.standard_normal((R, R))
    V = rng.standard_normal((J, R))
    W = rng.standard_normal((K, R))
    return X, Q, H, V, W


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_zero_slices_give_zero(rng, mode):
    X, Q, H, V, W = random_instance(rng)
    X = [sp.csr_matrix(x.shape) for x in X]
    F = slicewise_mttkrp(ImplicitY.from_slices(X, Q), mode, H, V, W)
    assert not F.any()


def test_mode3_reduces_to_entry_sum(rng):
    X = sp.random(4, 4, density=0.5, random_state=rng, format="csr")
    y = ImplicitY.from_slices([X], [np.eye(4)[:, :1]])
    # R=1, Q = first column of I: F = sum of the first row of X
    F = slicewise_mttkrp(y, 3, np.ones((1, 1)), np.ones((4, 1)), np.ones((1, 1)))
    assert F[0, 0] == pytest.approx(X[0].sum())
    # with a square identity Q the per-column sum recovers every entry once
    total = sum(
        slicewise_mttkrp(ImplicitY.from_slices([X], [np.eye(4)[:, [a]]]), 3, np.ones((1, 1)), np.ones((4, 1)), np.ones((1, 1)))[0, 0]
        for a in range(4)
    )
    assert total == pytest.approx(X.sum())


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_matches_materialized_oracle(rng, mode):
    for _ in range(50):
        X, Q, H, V, W = random_instance(rng)
        F = slicewise_mttkrp(ImplicitY.from_slices(X, Q), mode, H, V, W)
        assert rel_err(F, naive_mttkrp(X, Q, mode, H, V, W)) <= 1e-10


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_additive_over_slices(rng, mode):
    X, Q, H, V, W = random_instance(rng, K=4)
    F = slicewise_mttkrp(ImplicitY.from_slices(X, Q), mode, H, V, W)
    parts = []
    for k in range(4):
        single = slicewise_mttkrp(ImplicitY.from_slices([X[k]], [Q[k]]), mode, H, V, W[k : k + 1])
        parts.append(single)
    if mode == 3:
        np.testing.assert_allclose(F, np.vstack(parts), rtol=1e-12, atol=1e-14)
    else:
        np.testing.assert_allclose(F, sum(parts), rtol=1e-10, atol=1e-12)


def test_mode3_row_depends_only_on_its_slice(rng):
    X, Q, H, V, W = random_instance(rng, K=5)
    F = slicewise_mttkrp(ImplicitY.from_slices(X, Q), 3, H, V, W)
    X2 = list(X)
    X2[2] = X[2] + sp.random(*X[2].shape, density=0.5, random_state=rng, format="csr")
    F2 = slicewise_mttkrp(ImplicitY.from_slices(X2, Q), 3, H, V, W)
    changed = np.any(F != F2, axis=1)
    assert changed.tolist() == [False, False, True, False, False]


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_threaded_matches_serial(rng, mode):
    X, Q, H, V, W = random_instance(rng, K=9)
    y = ImplicitY.from_slices(X, Q)
    serial = slicewise_mttkrp(y, mode, H, V, W)
    ordered = slicewise_mttkrp(y, mode, H, V, W, threads=3, deterministic=True)
    assert np.array_equal(ordered, slicewise_mttkrp(y, mode, H, V, W, threads=3, deterministic=True))
    unordered = slicewise_mttkrp(y, mode, H, V, W, threads=3, deterministic=False)
    assert rel_err(ordered, serial) <= 1e-12
    assert rel_err(unordered, serial) <= 1e-9


def test_empty_slice_handled(rng):
    X = [sp.random(3, 4, density=0.5, random_state=rng, format="csr"), sp.csr_matrix((0, 4))]
    Q = [random_orthonormal(rng, 3, 2), np.zeros((0, 2))]
    H, V, W = rng.random((2, 2)), rng.random((4, 2)), rng.random((2, 2))
    F = slicewise_mttkrp(ImplicitY.from_slices(X, Q), 3, H, V, W)
    assert not F[1].any()
    np.testing.assert_allclose(F, naive_mttkrp(X, Q, 3, H, V, W), atol=1e-14)


def test_shape_mismatch(rng):
    X, Q, H, V, W = random_instance(rng)
    with pytest.raises(ValueError):
        slicewise_mttkrp(ImplicitY.from_slices(X, Q), 2, H, V[:-1], W)
    with pytest.raises(ValueError):
        slicewise_mttkrp(ImplicitY.from_slices(X, Q), 4, H, V, W)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_accumulation(rng):
    X, Q, H, V, W = random_instance(rng)
    V[0, 0] = np.inf
    with pytest.raises(FloatingPointError):
        slicewise_mttkrp(ImplicitY.from_slices(X, Q), 1, H, V, W)
