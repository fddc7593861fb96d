import numpy as np
import pytest
import scipy.linalg

from imfem.linalg import (
    EigenIterationError,
    SingularMatrixError,
    SparseMatrix,
    min_generalized_eig_sym,
    solve_direct,
)


def from_dense(a):
    m = SparseMatrix(a.shape[0])
    rows, cols = np.nonzero(a)
    m.add_batch(rows, cols, a[rows, cols])
    return m


def test_solve_identity(rng):
    n = 7
    A = from_dense(np.eye(n))
    rhs = rng.standard_normal(n)
    assert np.abs(solve_direct(A, rhs) - rhs).max() < 1e-14


def test_solve_tridiagonal_laplacian():
    a = np.diag(np.full(4, 2.0)) + np.diag(np.full(3, -1.0), 1) + np.diag(np.full(3, -1.0), -1)
    x = solve_direct(from_dense(a), np.ones(4))
    # oracle: dense Gaussian elimination
    assert np.abs(x - np.linalg.solve(a, np.ones(4))).max() < 1e-13
    assert np.allclose(x, [2.0, 3.0, 3.0, 2.0])


def test_solve_matches_dense_lu(rng):
    a = rng.standard_normal((8, 8))
    a += np.diag(np.abs(a).sum(axis=1) + 1.0)      # diagonally dominant
    rhs = rng.standard_normal(8)
    x = solve_direct(from_dense(a), rhs)
    assert np.abs(x - np.linalg.solve(a, rhs)).max() < 1e-12


def test_solve_residual_small(rng):
    a = rng.standard_normal((30, 30))
    a += np.diag(np.abs(a).sum(axis=1))
    rhs = rng.standard_normal(30)
    A = from_dense(a)
    x = solve_direct(A, rhs)
    assert np.linalg.norm(A @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_solve_graded_system():
    # strong diagonal grading must not leave junk in the tiny block
    scales = np.array([1.0, 1e-20, 1e-40, 1e-60])
    a = np.diag(scales)
    a[0, 1] = 1e-21
    a[2, 3] = 1e-62
    rhs = scales * np.array([1.0, 2.0, 3.0, 4.0])
    x = solve_direct(from_dense(a), rhs)
    assert np.abs(x - np.linalg.solve(a, rhs)).max() < 1e-8


def test_solve_singular_raises():
    a = np.zeros((3, 3))
    a[0, 0] = 1.0
    with pytest.raises(SingularMatrixError):
        solve_direct(from_dense(a), np.ones(3))


def test_duplicate_triplets_are_summed():
    m = SparseMatrix(2)
    m.add(0, 0, 1.5)
    m.add(0, 0, 2.5)
    m.add(1, 0, -1.0)
    csr = m.tocsr()
    assert csr[0, 0] == 4.0
    assert csr[1, 0] == -1.0
    assert csr.has_sorted_indices


def test_eig_diagonal():
    A = from_dense(np.diag([3.0, 1.0, 2.0]))
    M = from_dense(np.eye(3))
    assert abs(min_generalized_eig_sym(A, M) - 1.0) < 1e-8


def test_eig_skew_only():
    a = np.array([[0.0, 2.0], [-2.0, 0.0]])
    assert abs(min_generalized_eig_sym(from_dense(a), from_dense(np.eye(2)))) < 1e-10


def test_eig_matches_dense(rng):
    # oracle: dense full generalized eigendecomposition
    for _ in range(5):
        s = rng.standard_normal((6, 6))
        s = 0.5 * (s + s.T)
        q = rng.standard_normal((6, 6))
        m = q @ q.T + 6 * np.eye(6)
        lam = min_generalized_eig_sym(from_dense(s), from_dense(m), tol=1e-10)
        exact = scipy.linalg.eigh(s, m, eigvals_only=True)[0]
        assert abs(lam - exact) <= 1e-8 * max(1.0, abs(exact))


def test_eig_invariant_under_skew_addition(rng):
    s = rng.standard_normal((10, 10))
    s = 0.5 * (s + s.T)
    k = rng.standard_normal((10, 10))
    k = k - k.T
    m = np.eye(10)
    lam1 = min_generalized_eig_sym(from_dense(s), from_dense(m), tol=1e-10)
    lam2 = min_generalized_eig_sym(from_dense(s + k), from_dense(m), tol=1e-10)
    assert abs(lam1 - lam2) <= 1e-8 * max(1.0, abs(lam1))


def test_eig_nonconvergence_budget():
    A = from_dense(np.diag([1.0, 2.0]))
    M = from_dense(np.eye(2))
    with pytest.raises(EigenIterationError):
        min_generalized_eig_sym(A, M, max_iter=1)


def test_eig_clustered_pair(rng):
    s = np.diag([1.0, 1.0 + 1e-9, 5.0])
    lam = min_generalized_eig_sym(from_dense(s), from_dense(np.eye(3)))
    assert abs(lam - 1.0) < 1e-5
