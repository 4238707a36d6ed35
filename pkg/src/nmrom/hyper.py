"""Gappy-POD hyper-reduction and the hyper-reduced ROM solvers.

The residual basis comes from the solution snapshots (the solution-based
nonlinear subspace shortcut). Sample indices are chosen greedily; every solver
then works on the stencil closure ``H`` of the samples only.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import ConvergenceError, DimensionMismatchError, RankDeficiencyError
from .linalg import least_squares_solve, pseudo_inverse, qr_r_factor, spectral_norm
from .pod import compute_pod_basis
from .rom import (
    GN_MAX_ITER,
    GN_TOL,
    RomTrajectory,
    _Cached,
    _galerkin_march,
    galerkin_velocity,
    gauss_newton,
    initial_latent,
)
from .timestep import NEWTON_MAX_ITER, NEWTON_TOL, get_scheme, startup_scheme

COND_LIMIT = 1e10


def greedy_select_indices(phi_r, n_z):
    """Oversampled DEIM-style row selection.

    Cycles over the basis columns; each pick is the unchosen row where the
    current column is worst reconstructed (least squares on the chosen rows)
    from the columns before it. Ties go to the smallest index.
    """
    phi_r = np.asarray(phi_r, dtype=np.float64)
    m, n_r = phi_r.shape
    if n_z > m:
        raise ValueError(f"cannot pick {n_z} samples from {m} rows")
    if n_z < n_r:
        raise ValueError(f"need n_z >= n_r, got n_z={n_z}, n_r={n_r}")
    chosen = []
    taken = np.zeros(m, dtype=bool)
    c = 0
    while len(chosen) < n_z:
        col = c % n_r
        err = phi_r[:, col].copy()
        if col > 0:
            basis = phi_r[:, :col]
            coef = least_squares_solve(basis[chosen], phi_r[chosen, col])
            err -= basis @ coef
        score = np.abs(err)
        score[taken] = -1.0
        p = int(np.argmax(score))
        chosen.append(p)
        taken[p] = True
        c += 1
    return np.sort(np.array(chosen, dtype=np.int64))


def residual_basis_from_solution_snapshots(S, n_r):
    """Residual basis from the solution snapshots (same SVD as POD)."""
    return compute_pod_basis(S, n_r).phi


@dataclass(frozen=True)
class HyperReductionOperator:
    phi_r: np.ndarray  # m x n_r
    samples: np.ndarray  # sorted, n_z
    sampled: np.ndarray  # Z^T phi_r, n_z x n_r
    pinv: np.ndarray  # (Z^T phi_r)^+, n_r x n_z

    @property
    def n_r(self):
        return self.phi_r.shape[1]

    @property
    def n_z(self):
        return len(self.samples)

    def coefficients(self, r):
        """Gappy coefficients from the full residual ``r``."""
        return self.pinv @ np.asarray(r)[self.samples]

    def project(self, r):
        return self.phi_r @ self.coefficients(r)

    def projector_norm(self, tol=1e-8):
        """``||P||_2`` by power iteration on ``P^T P``."""
        m = self.phi_r.shape[0]
        s = self.samples

        def matvec(x):
            return self.phi_r @ (self.pinv @ x[s])

        def rmatvec(y):
            out = np.zeros(m)
            out[s] = self.pinv.T @ (self.phi_r.T @ y)
            return out

        return spectral_norm(matvec, rmatvec, m, tol=tol)

    def r_factor(self):
        return qr_r_factor(self.sampled)


def build_gappy_operator(phi_r, samples):
    phi_r = np.asarray(phi_r, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.int64)
    if len(np.unique(samples)) != len(samples):
        raise ValueError("sample indices must be distinct")
    samples = np.sort(samples)
    if samples.size and (samples[0] < 0 or samples[-1] >= phi_r.shape[0]):
        raise IndexError("sample index out of range")
    sampled = phi_r[samples]
    if sampled.shape[0] < sampled.shape[1]:
        raise RankDeficiencyError(f"{sampled.shape[0]} samples cannot determine {sampled.shape[1]} coefficients")
    sv = np.linalg.svd(sampled, compute_uv=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > COND_LIMIT:
        raise RankDeficiencyError(f"sampled residual basis is ill-conditioned (cond={sv[0] / max(sv[-1], 1e-300):.3e})")
    return HyperReductionOperator(phi_r, samples, sampled, pseudo_inverse(sampled))


# --- hyper-reduced solvers -------------------------------------------------


class HrSetup:
    """Everything a hyper-reduced run touches: the gappy operator, the sampled
    flux on the closure ``H`` and the representation restricted to ``H``."""

    def __init__(self, problem, op):
        self.problem = problem
        self.op = op
        self.sflux = problem.model.sampled(op.samples)
        if not np.array_equal(self.sflux.samples, op.samples):
            raise DimensionMismatchError("sampled flux and operator disagree on the samples")
        self.closure = self.sflux.closure
        self.pos = self.sflux.sample_pos
        self.rep_H = problem.representation.restrict(self.closure)
        self._C = None

    def galerkin_operator(self):
        """``(A Phi_S)^+ A`` for the linear representation, formed once."""
        if self._C is None:
            phi_S = self.rep_H.phi[self.pos]
            self._C = pseudo_inverse(self.op.pinv @ phi_S) @ self.op.pinv
        return self._C


def hr_lspg_step(setup, history, flux_history, t_n, n=None, tol=GN_TOL, max_iter=GN_MAX_ITER):
    """One hyper-reduced LSPG step. ``history[j-1] = (y^{n-j}, u_H^{n-j})`` and
    ``flux_history[j-1]`` holds the sampled flux at step ``n-j``."""
    problem = setup.problem
    scheme = get_scheme(problem.integrator)
    if n is not None:
        scheme = startup_scheme(scheme, n)
    dt = problem.grid.dt
    a0, b0 = scheme.alpha[0], scheme.beta[0]
    pos, A, sf, rep = setup.pos, setup.op.pinv, setup.sflux, setup.rep_H
    const = np.zeros(len(pos))
    for j in range(1, scheme.k + 1):
        const += scheme.alpha[j] * history[j - 1][1][pos]
        if scheme.beta[j] != 0.0:
            const -= dt * scheme.beta[j] * flux_history[j - 1]

    def fun(y):
        uH, JH = rep.decode_and_jacobian(y)
        r = a0 * uH[pos] + const - dt * b0 * sf.flux(uH, t_n)
        Jr = a0 * JH[pos] - (dt * b0) * (sf.jacobian(uH, t_n) @ JH)
        return A @ r, A @ Jr

    cache = _Cached(fun)
    out = gauss_newton(cache.residual, cache.jacobian, history[0][0], tol=tol, max_iter=max_iter)
    return out, rep.decode(out.x)


def ls_galerkin_hr_rhs(setup, y, t=0.0, with_jacobian=False):
    rep, sf = setup.rep_H, setup.sflux
    uH = rep.decode(y)
    C = setup.galerkin_operator()
    F = C @ sf.flux(uH, t)
    if not with_jacobian:
        return F
    return F, C @ (sf.jacobian(uH, t) @ rep.phi)


def nm_galerkin_hr_rhs(setup, y, t=0.0, with_jacobian=False):
    rep, sf, pos, A = setup.rep_H, setup.sflux, setup.pos, setup.op.pinv
    uH, JH = rep.decode_and_jacobian(y)
    Jt = A @ JH[pos]
    ft = A @ sf.flux(uH, t)
    if not with_jacobian:
        return galerkin_velocity(Jt, ft)[0]
    D = rep.jacobian_derivative(y)
    dJt = None if D is None else [A @ D[k][pos] for k in range(D.shape[0])]
    JfJ = A @ (sf.jacobian(uH, t) @ JH)
    return galerkin_velocity(Jt, ft, dJt, JfJ)


def run_hr_rom(setup, tol=None, max_iter=None, kind=None):
    """March a hyper-reduced ROM; only closure entries are ever formed.

    Full states are reconstructed lazily by :attr:`RomTrajectory.states`.
    """
    problem = setup.problem
    rep_full = problem.representation
    y0 = initial_latent(rep_full, problem.model.initial_state())
    grid = problem.grid
    start = time.perf_counter()
    if problem.projection == "lspg":
        tol, max_iter = tol or GN_TOL, max_iter or GN_MAX_ITER
        Y = np.empty((grid.nt + 1, len(y0)))
        Y[0] = y0
        uH = setup.rep_H.decode(y0)
        hist = [(y0, uH)]
        fl = [setup.sflux.flux(uH, 0.0)]
        iters = []
        for n in range(1, grid.nt + 1):
            t_n = grid.time(n)
            try:
                out, uH = hr_lspg_step(setup, hist, fl, t_n, n=n, tol=tol, max_iter=max_iter)
            except ConvergenceError as exc:
                raise ConvergenceError(str(exc), iterations=exc.iterations, step=n) from exc
            Y[n] = out.x
            iters.append(out.iterations)
            hist.insert(0, (out.x, uH))
            del hist[3:]
            fl.insert(0, setup.sflux.flux(uH, t_n))
            del fl[3:]
    else:
        rhs = nm_galerkin_hr_rhs if rep_full.nonlinear else ls_galerkin_hr_rhs
        Y, iters = _galerkin_march(
            lambda y, t, jac=False: rhs(setup, y, t, jac),
            y0, problem.integrator, grid, tol or NEWTON_TOL, max_iter or NEWTON_MAX_ITER,
        )
    wall = time.perf_counter() - start
    if kind is None:
        kind = ("nm-" if rep_full.nonlinear else "ls-") + problem.projection + "-hr"
    return RomTrajectory(Y, rep_full, problem.model.mu, grid.dt, kind, iters, wall)


def dense_projection(op, m):
    """Explicit ``m x m`` oblique projector (small problems and tests)."""
    P = np.zeros((m, m))
    P[:, op.samples] = op.phi_r @ op.pinv
    return P


def sampling_matrix(samples, m):
    """``Z`` as a sparse ``m x n_z`` matrix."""
    samples = np.asarray(samples)
    return sp.csr_matrix((np.ones(len(samples)), (samples, np.arange(len(samples)))), shape=(m, len(samples)))
