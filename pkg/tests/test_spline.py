import math

import numpy as np
import pytest
from conftest import random_tensor
from hypothesis import given, settings
from hypothesis import strategies as st

from parafac2_admm.spline import (
    SplineBasis,
    SplineError,
    build_basis,
    eval_basis,
    make_knots,
    project_slice,
)


def truncated_power_bspline(knots, i, d, t):
    """(knots[i+d+1] - knots[i]) times the divided difference of (x - t)_+^d."""
    nodes = knots[i : i + d + 2]
    total = 0.0
    for j, xj in enumerate(nodes):
        denom = math.prod(xj - xm for m, xm in enumerate(nodes) if m != j)
        total += max(xj - t, 0.0) ** d / denom
    return (nodes[-1] - nodes[0]) * total


def test_degree_zero_indicator():
    basis = SplineBasis([0.0, 1.0, 2.0], 0)
    assert eval_basis(basis, 0, 0, 0.5) == 1.0
    assert eval_basis(basis, 0, 0, 1.5) == 0.0
    assert eval_basis(basis, 1, 0, 1.0) == 1.0
    # right end of the last interval is closed
    assert eval_basis(basis, 1, 0, 2.0) == 1.0
    assert eval_basis(basis, 1, 0, 2.5) == 0.0


def test_linear_hat():
    basis = SplineBasis([0.0, 1.0, 2.0], 1)
    assert [eval_basis(basis, 0, 1, t) for t in (0.5, 1.0, 1.5)] == [0.5, 1.0, 0.5]


def test_cubic_matches_truncated_power(rng):
    knots = np.sort(rng.uniform(0, 10, size=12))
    basis = SplineBasis(knots, 3)
    for t in rng.uniform(knots[0], knots[-1], size=100):
        for i in range(basis.n_basis):
            expected = truncated_power_bspline(knots, i, 3, t)
            assert eval_basis(basis, i, 3, t) == pytest.approx(expected, abs=1e-9)


def test_repeated_knots_zero_division_convention():
    basis = SplineBasis(make_knots(0.0, 4.0, 5, 3), 3)
    values = [eval_basis(basis, i, 3, 0.0) for i in range(5)]
    assert values == [1.0, 0.0, 0.0, 0.0, 0.0]
    values = [eval_basis(basis, i, 3, 4.0) for i in range(5)]
    assert values == pytest.approx([0, 0, 0, 0, 1.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_non_negative_and_local_support(seed, d):
    rng = np.random.default_rng(seed)
    knots = np.sort(np.round(rng.uniform(0, 5, size=d + 6), 1))
    basis = SplineBasis(knots, d)
    for t in rng.uniform(-1, 6, size=20):
        for i in range(basis.n_basis):
            v = eval_basis(basis, i, d, t)
            assert v >= 0
            if t < knots[i] or t > knots[i + d + 1]:
                assert v == 0


def test_continuity(rng):
    basis = SplineBasis(make_knots(0.0, 30.0, 7, 3), 3)
    eps = 1e-7
    # derivative of a cubic B-spline on this knot grid is bounded well below 10 / spacing
    lipschitz = 10.0 / (30.0 / 4)
    for t in rng.uniform(0, 30 - eps, size=1000):
        for i in range(7):
            diff = abs(eval_basis(basis, i, 3, t + eps) - eval_basis(basis, i, 3, t))
            assert diff <= 10 * eps * lipschitz


def test_uniform_gaps_coincide():
    _, a = build_basis([0, 1, 2, 3, 4], 4, degree=2, gap_aware=True)
    _, b = build_basis([0, 1, 2, 3, 4], 4, degree=2, gap_aware=False)
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-15)


def test_support_placement_gap_vs_index():
    _, gap = build_basis([0, 1, 2, 10], 2, degree=0, gap_aware=True)
    _, idx = build_basis([0, 1, 2, 10], 2, degree=0, gap_aware=False)
    np.testing.assert_array_equal(gap.matrix, [[1, 0], [1, 0], [1, 0], [0, 1]])
    np.testing.assert_array_equal(idx.matrix, [[1, 0], [1, 0], [0, 1], [0, 1]])


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_partition_of_unity(rng, degree):
    days = np.cumsum(rng.integers(1, 30, size=40))
    _, sbm = build_basis(days, 9, degree=degree, gap_aware=True)
    row_sums = [sum(row) for row in sbm.matrix.tolist()]
    np.testing.assert_allclose(row_sums, 1.0, atol=1e-12)


def test_build_basis_shapes_and_orthonormality(rng):
    days = np.cumsum(rng.integers(1, 30, size=30))
    basis, sbm = build_basis(days, 7, degree=3)
    assert basis.n_basis == 7 and basis.knots.size == 11
    assert sbm.matrix.shape == (30, 7)
    C = sbm.left_orthonormal
    assert np.linalg.norm(C.T @ C - np.eye(sbm.rank)) <= 1e-10
    # C spans the columns of M
    M = sbm.matrix
    assert np.linalg.norm(M - C @ (C.T @ M)) <= 1e-10 * np.linalg.norm(M)


def test_rank_truncation():
    # two distinct points cannot support more than 2 independent columns
    _, sbm = build_basis(None, 2, degree=1, gap_aware=False, n_rows=2)
    assert sbm.rank == 2
    # the middle interval [10, 20) holds no visit, so its column is zero
    _, sbm = build_basis([0, 1, 2, 30], 3, degree=0, gap_aware=True)
    assert not sbm.matrix[:, 1].any()
    assert sbm.rank == 2 and sbm.left_orthonormal.shape == (4, 2)


def test_build_basis_errors():
    with pytest.raises(SplineError, match="exceeds"):
        build_basis([0, 1, 2], 4, degree=1)
    with pytest.raises(SplineError, match="visit days"):
        build_basis(None, 2, degree=1, gap_aware=True, n_rows=5)
    with pytest.raises(SplineError, match="coincide"):
        build_basis([3], 1, degree=0)
    with pytest.raises(SplineError, match="degree"):
        build_basis([0, 1, 2, 3, 4], 3, degree=3)


def test_project_identity_and_zero(rng):
    tensor = random_tensor(rng, K=1, J=5, rows=(4, 4), days=True)
    s = tensor.slices[0]
    _, sbm = build_basis(s.visit_days, 4, degree=1)
    sbm.left_orthonormal = np.eye(4)
    np.testing.assert_array_equal(project_slice(sbm, s, 5), s.to_dense(5))
    zero = type(s)(4, [], [], [])
    assert not project_slice(sbm, zero, 5).any()


def test_project_matches_dense(rng):
    tensor = random_tensor(rng, K=3, J=7, rows=(10, 20), days=True)
    for k, s in enumerate(tensor.slices):
        _, sbm = build_basis(s.visit_days, 6, degree=3)
        dense = sbm.left_orthonormal.T @ s.to_dense(7)
        np.testing.assert_allclose(project_slice(sbm, s, 7), dense, atol=1e-12)
        np.testing.assert_allclose(project_slice(sbm, tensor.csr(k)), dense, atol=1e-12)
    with pytest.raises(ValueError):
        project_slice(sbm, np.zeros((3, 7)))
