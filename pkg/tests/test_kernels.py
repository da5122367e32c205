import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nnkood.data import l2_normalize
from nnkood.errors import PreconditionError, ShapeError, SingularError
from nnkood.kernels import KernelSpec, gram, knn_atoms, solve_spd_ridge, top_k_indices

COS = KernelSpec("cosine")
GAUSS = KernelSpec("gaussian", 1.0)


def test_cosine_orthonormal():
    I = np.eye(2)
    assert gram(I, I, COS).tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_gaussian_closed_form():
    a = np.array([[0.0, 0.0]])
    assert gram(a, a, GAUSS)[0, 0] == 1.0
    b = np.array([[1.0, 1.0]])
    assert gram(a, b, GAUSS)[0, 0] == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert gram(a, b, GAUSS)[0, 0] == pytest.approx(0.367879, abs=1e-6)


def test_cosine_matches_scalar_loop():
    rng = np.random.default_rng(0)
    A = l2_normalize(rng.standard_normal((5, 3)))
    B = l2_normalize(rng.standard_normal((4, 3)))
    G = gram(A, B, COS)
    for i in range(5):
        for j in range(4):
            dot = sum(A[i, t] * B[j, t] for t in range(3))
            assert abs(G[i, j] - dot) <= 1e-14


def test_gaussian_matches_scalar_loop():
    rng = np.random.default_rng(1)
    A, B = rng.standard_normal((6, 4)), rng.standard_normal((3, 4))
    k = KernelSpec("gaussian", 1.7)
    G = gram(A, B, k)
    for i in range(6):
        for j in range(3):
            d2 = sum((A[i, t] - B[j, t]) ** 2 for t in range(4))
            assert G[i, j] == pytest.approx(math.exp(-d2 / (2 * 1.7**2)), rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5)))
def test_gaussian_self_gram_symmetric_unit_diagonal(A):
    G = gram(A, A, KernelSpec("gaussian", 2.0))
    assert np.array_equal(G, G.T)
    assert np.all(np.diag(G) == 1.0)
    assert np.all((G > 0) & (G <= 1))


def test_kernel_errors():
    with pytest.raises(ShapeError):
        gram(np.eye(2), np.eye(3), GAUSS)
    with pytest.raises(PreconditionError):
        gram(np.array([[3.0, 4.0]]), np.eye(2), COS)
    with pytest.raises(PreconditionError):
        KernelSpec("laplace")
    with pytest.raises(PreconditionError):
        KernelSpec("gaussian", 0.0)


def test_knn_self_and_ties():
    atoms = np.eye(4)
    assert knn_atoms(atoms[2], atoms, 1, COS).tolist() == [2]
    q = l2_normalize([[1.0, 1.0, 0.0, 0.0]])[0]
    assert knn_atoms(q, atoms, 1, COS).tolist() == [0]
    assert knn_atoms(q, atoms, 3, COS).tolist() == [0, 1, 2]
    with pytest.raises(PreconditionError):
        knn_atoms(q, atoms, 5, COS)


def test_knn_matches_sort_all():
    rng = np.random.default_rng(2)
    atoms = l2_normalize(rng.standard_normal((50, 6)))
    for _ in range(20):
        q = l2_normalize(rng.standard_normal((1, 6)))[0]
        sims = [float(np.dot(q, a)) for a in atoms]
        expected = sorted(range(50), key=lambda j: (-sims[j], j))[:5]
        assert knn_atoms(q, atoms, 5, COS).tolist() == expected


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=30), st.data())
def test_top_k_with_heavy_ties(values, data):
    k = data.draw(st.integers(1, len(values)))
    s = np.array(values, dtype=float)
    expected = sorted(range(len(values)), key=lambda j: (-values[j], j))[:k]
    assert top_k_indices(s, k).tolist() == expected


def test_spd_solve_examples():
    b = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(solve_spd_ridge(np.eye(3), b), b)
    np.testing.assert_allclose(solve_spd_ridge([[2.0, 0.0], [0.0, 4.0]], [[2.0], [8.0]]), [[1.0], [2.0]])


def test_spd_solve_matches_explicit_inverse():
    rng = np.random.default_rng(3)
    for _ in range(20):
        G = rng.standard_normal((6, 6))
        A = G @ G.T + 0.5 * np.eye(6)
        B = rng.standard_normal((6, 3))
        np.testing.assert_allclose(solve_spd_ridge(A, B), np.linalg.inv(A) @ B, atol=1e-9)
        np.testing.assert_allclose(solve_spd_ridge(A, B, 0.3), np.linalg.inv(A + 0.3 * np.eye(6)) @ B, atol=1e-9)


def test_spd_solve_escalates_ridge_on_singular():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    X = solve_spd_ridge(A, [[1.0], [1.0]])
    assert np.all(np.isfinite(X))


def test_spd_solve_gives_up():
    A = -np.eye(3)
    with pytest.raises(SingularError):
        solve_spd_ridge(A, np.ones((3, 1)))
    with pytest.raises(PreconditionError):
        solve_spd_ridge([[1.0, 0.5], [0.0, 1.0]], np.ones((2, 1)))
