"""Dense linear-algebra kernels.

Thin wrappers over LAPACK (through numpy/scipy) that enforce the contracts the
rest of the package relies on: finite inputs, a fixed rank guard, and a
deterministic sign convention for singular vectors.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import ConvergenceError, DimensionMismatchError, RankDeficiencyError

RANK_TOL = 1e-12


def as_matrix(A, name="A"):
    """Return ``A`` as a finite 2D float64 array."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionMismatchError(f"{name} must be a non-empty 2D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True)
class ThinSvd:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.sigma) @ self.V.T


def thin_svd(A, driver="gesdd"):
    """Thin SVD ``A = U diag(sigma) V^T`` with non-increasing ``sigma``.

    Each column of ``U`` is flipped so that its largest-magnitude entry is
    positive, which makes bases reproducible across runs and drivers.
    ``driver="gesvd"`` selects the slower QR-iteration LAPACK routine; a
    LAPACK convergence failure is raised as :class:`ConvergenceError`.
    """
    A = as_matrix(A)
    try:
        U, s, Vt = scipy.linalg.svd(A, full_matrices=False, lapack_driver=driver, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge ({driver}): {exc}") from exc
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    V = Vt.T * signs
    return ThinSvd(U=U, sigma=s, V=V)


def _check_rank(sigma, cols):
    if len(sigma) < cols or sigma[0] == 0.0 or sigma[-1] < RANK_TOL * sigma[0]:
        smin = sigma[-1] if len(sigma) else 0.0
        smax = sigma[0] if len(sigma) else 0.0
        raise RankDeficiencyError(
            f"matrix is rank deficient (sigma_min={smin:.3e}, sigma_max={smax:.3e})"
        )


def pseudo_inverse(A):
    """Moore-Penrose inverse ``(A^T A)^{-1} A^T`` of a full-column-rank matrix.

    Formed from the thin QR factorization, ``A^+ = R^{-1} Q^T``.
    """
    A = as_matrix(A)
    rows, cols = A.shape
    if cols > rows:
        raise RankDeficiencyError(f"cannot have full column rank with shape {A.shape}")
    Q, R = np.linalg.qr(A)
    _check_rank(np.linalg.svd(R, compute_uv=False), cols)
    return scipy.linalg.solve_triangular(R, Q.T, check_finite=False)


def least_squares_solve(A, b):
    """Return ``argmin ||A x - b||_2`` via Householder QR.

    QR is used rather than the normal equations so the conditioning is that of
    ``A`` and not its square.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or b.shape[0] != A.shape[0]:
        raise DimensionMismatchError(f"A {A.shape} and b {b.shape} are incompatible")
    rows, cols = A.shape
    if cols > rows:
        raise RankDeficiencyError(f"cannot have full column rank with shape {A.shape}")
    Q, R = np.linalg.qr(A)
    _check_rank(np.linalg.svd(R, compute_uv=False), cols)
    return scipy.linalg.solve_triangular(R, Q.T @ b, check_finite=False)


def qr_r_factor(A):
    """Upper-triangular factor ``R`` of the thin QR factorization ``A = QR``."""
    A = as_matrix(A)
    rows, cols = A.shape
    if cols > rows:
        raise RankDeficiencyError(f"cannot have full column rank with shape {A.shape}")
    R = np.linalg.qr(A, mode="r")
    _check_rank(np.linalg.svd(R, compute_uv=False), cols)
    return R


def spectral_norm(matvec, rmatvec, n, tol=1e-8, max_iter=1000, seed=0):
    """Largest singular value of a linear operator by power iteration on ``A^T A``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = rmatvec(matvec(x))
        new = np.linalg.norm(y)
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return float(np.sqrt(lam))
