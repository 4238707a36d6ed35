import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nmrom.exceptions import DimensionMismatchError, RankDeficiencyError
from nmrom.linalg import (
    as_matrix,
    least_squares_solve,
    pseudo_inverse,
    qr_r_factor,
    spectral_norm,
    thin_svd,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_svd_identity():
    s = thin_svd(np.eye(3))
    np.testing.assert_allclose(s.sigma, [1, 1, 1])


def test_svd_column_vector():
    s = thin_svd(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(s.sigma, [5.0])
    np.testing.assert_allclose(s.U[:, 0], [0.6, 0.8])


def test_svd_random_reconstruction(rng):
    A = rng.standard_normal((20, 8))
    s = thin_svd(A)
    assert np.linalg.norm(A - s.reconstruct()) <= 1e-10 * np.linalg.norm(A)
    assert np.linalg.norm(s.U.T @ s.U - np.eye(8)) <= 1e-10 * 8
    assert np.all(np.diff(s.sigma) <= 0)


def test_svd_sign_convention_deterministic(rng):
    A = rng.standard_normal((15, 4))
    a, b = thin_svd(A), thin_svd(A, driver="gesvd")
    np.testing.assert_allclose(a.U, b.U, atol=1e-10)
    for k in range(4):
        assert a.U[np.argmax(np.abs(a.U[:, k])), k] > 0


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_matrix(np.array([[1.0, np.nan]]))
    with pytest.raises(DimensionMismatchError):
        as_matrix(np.zeros((0, 3)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)), elements=finite))
def test_svd_round_trip_property(A):
    s = thin_svd(A)
    assert np.linalg.norm(A - s.reconstruct()) <= 1e-10 * max(1.0, np.linalg.norm(A))
    assert np.all(s.sigma >= 0)
    assert np.all(np.diff(s.sigma) <= 1e-12 * max(1.0, s.sigma[0]))


def test_pinv_orthonormal(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((7, 3)))
    np.testing.assert_allclose(pseudo_inverse(Q), Q.T, atol=1e-12)


def test_pinv_diagonal():
    np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]), atol=1e-15)


def test_pinv_left_inverse(rng):
    A = rng.standard_normal((10, 3))
    np.testing.assert_allclose(pseudo_inverse(A) @ A, np.eye(3), atol=1e-8)


def test_pinv_rank_deficient():
    A = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(RankDeficiencyError):
        pseudo_inverse(A)
    with pytest.raises(RankDeficiencyError):
        pseudo_inverse(np.ones((2, 3)))


def _full_rank(A):
    s = np.linalg.svd(A, compute_uv=False)
    return A.shape[1] <= A.shape[0] and s[-1] > 1e-6 * s[0] and s[0] > 1e-6


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 10), st.integers(1, 3)), elements=finite))
def test_moore_penrose_identities(A):
    if not _full_rank(A):
        return
    P = pseudo_inverse(A)
    tol = 1e-8 * max(1.0, np.linalg.norm(A) * np.linalg.norm(P)) ** 2
    assert np.allclose(A @ P @ A, A, atol=tol)
    assert np.allclose(P @ A @ P, P, atol=tol)
    assert np.allclose((A @ P).T, A @ P, atol=tol)
    assert np.allclose((P @ A).T, P @ A, atol=tol)


def test_lstsq_examples(rng):
    b = rng.standard_normal(4)
    np.testing.assert_allclose(least_squares_solve(np.eye(4), b), b)
    np.testing.assert_allclose(least_squares_solve(np.array([[1.0], [1.0]]), np.array([0.0, 2.0])), [1.0])
    A = rng.standard_normal((50, 5))
    b = rng.standard_normal(50)
    x = least_squares_solve(A, b)
    assert np.linalg.norm(A.T @ (A @ x - b)) <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(b)


def test_lstsq_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        least_squares_solve(np.eye(3), np.ones(4))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(4, 12), st.integers(1, 4)), elements=finite), st.integers(0, 2**31))
def test_lstsq_matches_pinv(A, seed):
    if not _full_rank(A):
        return
    b = np.random.default_rng(seed).standard_normal(A.shape[0])
    x = least_squares_solve(A, b)
    y = pseudo_inverse(A) @ b
    assert np.linalg.norm(x - y) <= 1e-8 * max(1.0, np.linalg.norm(y))


def test_qr_r_examples(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    np.testing.assert_allclose(np.abs(qr_r_factor(Q)), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.abs(qr_r_factor(np.array([[3.0], [4.0]]))), [[5.0]])
    A = rng.standard_normal((12, 4))
    R = qr_r_factor(A)
    assert np.allclose(np.triu(R), R)
    Qf = A @ np.linalg.inv(R)
    np.testing.assert_allclose(Qf.T @ Qf, np.eye(4), atol=1e-10)


def test_spectral_norm(rng):
    A = rng.standard_normal((9, 5))
    est = spectral_norm(lambda x: A @ x, lambda y: A.T @ y, 5, tol=1e-14)
    assert abs(est - np.linalg.norm(A, 2)) <= 1e-6 * np.linalg.norm(A, 2)
    assert spectral_norm(lambda x: 0 * x, lambda y: 0 * y, 3) == 0.0
