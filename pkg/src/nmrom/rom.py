"""Linear-subspace and nonlinear-manifold ROMs with Galerkin or LSPG projection.

A *representation* maps latent coordinates ``y`` to states ``u_ref + g(y)``.
:class:`LinearRepresentation` has ``g(y) = Phi y``; :class:`ManifoldRepresentation`
stacks one trained decoder per physical component. Both can be restricted to an
index set, which is what the hyper-reduced solvers in :mod:`nmrom.hyper` use.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import ConvergenceError, DimensionMismatchError, RankDeficiencyError
from .linalg import RANK_TOL, least_squares_solve
from .subnet import extract_subnet
from .timestep import (
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    get_scheme,
    newton_step_solve,
    startup_scheme,
)

GN_TOL = 1e-8
GN_MAX_ITER = 20
GN_STEP_TOL = 1e-12
GN_MAX_HALVINGS = 10

ROM_KINDS = (
    "ls-galerkin", "ls-lspg", "nm-galerkin", "nm-lspg",
    "ls-galerkin-hr", "ls-lspg-hr", "nm-galerkin-hr", "nm-lspg-hr",
)


# --- representations -------------------------------------------------------


class LinearRepresentation:
    """``u = u_ref + Phi y``."""

    nonlinear = False

    def __init__(self, phi, u_ref=None):
        self.phi = np.ascontiguousarray(phi, dtype=np.float64)
        m = self.phi.shape[0]
        self.u_ref = np.zeros(m) if u_ref is None else np.asarray(u_ref, dtype=np.float64)
        if self.u_ref.shape != (m,):
            raise DimensionMismatchError(f"u_ref has shape {self.u_ref.shape}, expected ({m},)")

    @property
    def dim(self):
        return self.phi.shape[0]

    @property
    def latent_dim(self):
        return self.phi.shape[1]

    def encode(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.dim,):
            raise DimensionMismatchError(f"state has shape {u.shape}, expected ({self.dim},)")
        return self.phi.T @ (u - self.u_ref)

    def decode(self, y):
        return self.u_ref + self.phi @ y

    def decode_many(self, Y):
        # row by row, so each state is bitwise what decode() gives
        return np.stack([self.decode(y) for y in np.asarray(Y, dtype=np.float64)])

    def jacobian(self, y):
        return self.phi

    def decode_and_jacobian(self, y):
        return self.decode(y), self.phi

    def jacobian_derivative(self, y):
        return None  # identically zero

    def restrict(self, H):
        H = np.asarray(H, dtype=np.int64)
        return LinearRepresentation(self.phi[H], self.u_ref[H])


def block_linear(bases, u_ref=None):
    """Block-diagonal basis, one block per component (in state order)."""
    return LinearRepresentation(scipy.linalg.block_diag(*bases), u_ref)


class ManifoldRepresentation:
    """``u = u_ref + (g_1(y_1); g_2(y_2); ...)``, one decoder per component.

    ``decoders`` are maps on ``u - u_ref`` (scaled decoders); ``encoders`` are
    the matching scaled encoders used for the initial latent state.
    """

    nonlinear = True

    def __init__(self, decoders, encoders, u_ref, out_index=None):
        self.decoders = list(decoders)
        self.encoders = list(encoders) if encoders is not None else None
        self.u_ref = np.asarray(u_ref, dtype=np.float64)
        lat = np.cumsum([0] + [d.latent_dim for d in self.decoders])
        self.latent_slices = [slice(lat[i], lat[i + 1]) for i in range(len(self.decoders))]
        outs = np.cumsum([0] + [d.output_dim for d in self.decoders])
        self.state_slices = [slice(outs[i], outs[i + 1]) for i in range(len(self.decoders))]
        if outs[-1] != self.u_ref.shape[0]:
            raise DimensionMismatchError(f"decoders produce {outs[-1]} outputs, u_ref has {self.u_ref.shape[0]}")
        self.out_index = out_index  # global indices when restricted

    @classmethod
    def from_scaled_maps(cls, maps):
        maps = list(maps)
        return cls([mp.g for mp in maps], [mp.h for mp in maps], np.concatenate([mp.u_ref for mp in maps]))

    @property
    def dim(self):
        return self.u_ref.shape[0]

    @property
    def latent_dim(self):
        return self.latent_slices[-1].stop

    def encode(self, u):
        if self.encoders is None:
            raise ValueError("restricted representation has no encoder")
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.dim,):
            raise DimensionMismatchError(f"state has shape {u.shape}, expected ({self.dim},)")
        d = u - self.u_ref
        return np.concatenate([h(d[s]) for h, s in zip(self.encoders, self.state_slices)])

    def decode(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self.u_ref + np.concatenate([g(y[ls]) for g, ls in zip(self.decoders, self.latent_slices)])

    def decode_many(self, Y):
        return np.stack([self.decode(y) for y in np.asarray(Y, dtype=np.float64)])

    def decode_and_jacobian(self, y):
        y = np.asarray(y, dtype=np.float64)
        if len(self.decoders) == 1:
            out, J = self.decoders[0].forward_and_jacobian(y)
            return self.u_ref + out, J
        J = np.zeros((self.dim, self.latent_dim))
        outs = []
        for g, ls, ss in zip(self.decoders, self.latent_slices, self.state_slices):
            o, Jk = g.forward_and_jacobian(y[ls])
            outs.append(o)
            J[ss, ls] = Jk
        return self.u_ref + np.concatenate(outs), J

    def jacobian(self, y):
        return self.decode_and_jacobian(y)[1]

    def jacobian_derivative(self, y):
        """``D[k] = dJ/dy_k`` with shape ``(f, m, f)``."""
        y = np.asarray(y, dtype=np.float64)
        f = self.latent_dim
        D = np.zeros((f, self.dim, f))
        for g, ls, ss in zip(self.decoders, self.latent_slices, self.state_slices):
            Dk = g.jacobian_derivative(y[ls])
            for a in range(Dk.shape[0]):
                D[ls.start + a, ss, ls] = Dk[a]
        return D

    def restrict(self, H):
        """Representation of ``u[H]`` built from decoder subnets."""
        H = np.unique(np.asarray(H, dtype=np.int64))
        subs, refs, idx = [], [], []
        for g, ss in zip(self.decoders, self.state_slices):
            local = H[(H >= ss.start) & (H < ss.stop)] - ss.start
            if local.size == 0:
                raise ValueError("restriction must touch every component")
            subs.append(extract_subnet(g, local))
            idx.append(local + ss.start)
        out = np.concatenate(idx)
        return ManifoldRepresentation(subs, None, self.u_ref[out], out_index=out)


# --- problems and trajectories --------------------------------------------


@dataclass
class RomProblem:
    model: object
    integrator: str
    grid: object
    representation: object
    projection: str = "lspg"

    def __post_init__(self):
        if self.projection not in ("galerkin", "lspg"):
            raise ValueError(f"projection must be 'galerkin' or 'lspg', got {self.projection!r}")
        if self.representation.dim != self.model.dim:
            raise DimensionMismatchError(
                f"representation dim {self.representation.dim} != model dim {self.model.dim}"
            )
        if self.projection == "lspg" and self.integrator == "rk2":
            raise ValueError("LSPG is defined for implicit integrators only")


@dataclass
class RomTrajectory:
    latent: np.ndarray  # (nt + 1, f)
    representation: object
    mu: float
    dt: float
    kind: str = ""
    iterations: list = field(default_factory=list)
    wall_time: float = 0.0
    _states: np.ndarray = field(default=None, repr=False)

    @property
    def nt(self):
        return self.latent.shape[0] - 1

    @property
    def states(self):
        """Reconstructed full states (computed on demand)."""
        if self._states is None:
            self._states = self.representation.decode_many(self.latent)
        return self._states


def initial_latent(representation, u0):
    return representation.encode(u0)


# --- Gauss-Newton ----------------------------------------------------------


@dataclass
class GaussNewtonResult:
    x: np.ndarray
    iterations: int
    objective: float
    grad_norm: float


def gauss_newton(residual, jacobian, start, tol=GN_TOL, max_iter=GN_MAX_ITER):
    """Minimize ``0.5 ||r(x)||^2`` from ``start``.

    Steps solve ``min ||J d + r||`` by QR; each step is halved (at most
    ``GN_MAX_HALVINGS`` times) until the objective does not increase. Converged
    when ``||J^T r|| <= tol * max(1, ||J^T r(start)||)`` or the step is below
    ``GN_STEP_TOL``. If no halving decreases the objective, the current iterate
    is returned as a numerical stationary point.
    """
    x = np.array(start, dtype=np.float64, copy=True)
    r = residual(x)
    J = jacobian(x)
    grad = J.T @ r
    gnorm = float(np.linalg.norm(grad))
    target = tol * max(1.0, gnorm)
    obj = 0.5 * float(r @ r)
    it = 0
    while gnorm > target:
        if it >= max_iter:
            raise ConvergenceError(
                f"Gauss-Newton did not converge in {max_iter} iterations (|J^T r|={gnorm:.3e}, target {target:.3e})",
                iterations=it,
            )
        delta = -least_squares_solve(J, r)
        if np.linalg.norm(delta) <= GN_STEP_TOL:
            break
        step = 1.0
        for _ in range(GN_MAX_HALVINGS + 1):
            xn = x + step * delta
            rn = residual(xn)
            objn = 0.5 * float(rn @ rn)
            if objn <= obj:
                break
            step *= 0.5
        else:
            break
        x, r, obj = xn, rn, objn
        if not np.isfinite(obj):
            raise ConvergenceError("Gauss-Newton iterate became non-finite", iterations=it + 1)
        J = jacobian(x)
        grad = J.T @ r
        gnorm = float(np.linalg.norm(grad))
        it += 1
    return GaussNewtonResult(x, it, obj, gnorm)


class _Cached:
    """Evaluates ``fun(x) -> (r, J)`` once per distinct ``x``."""

    def __init__(self, fun):
        self.fun = fun
        self.key = None
        self.val = None

    def __call__(self, x):
        key = x.tobytes()
        if key != self.key:
            self.val = self.fun(x)
            self.key = key
        return self.val

    def residual(self, x):
        return self(x)[0]

    def jacobian(self, x):
        return self(x)[1]


# --- Galerkin velocity -----------------------------------------------------


def _qr(J):
    Q, R = np.linalg.qr(J)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= RANK_TOL * max(d.max(), 1e-300):
        raise RankDeficiencyError("representation Jacobian is rank deficient")
    return Q, R


def galerkin_velocity(J, fvec, dJ=None, JfJ=None):
    """``F = J^+ f`` and, if ``JfJ`` is given, ``dF/dy``.

    ``JfJ`` is ``J_f J`` (flux Jacobian times representation Jacobian) and
    ``dJ[k] = dJ/dy_k`` (``None`` for a linear representation).
    """
    Q, R = _qr(J)
    F = scipy.linalg.solve_triangular(R, Q.T @ fvec)
    if JfJ is None:
        return F, None
    dF = scipy.linalg.solve_triangular(R, Q.T @ JfJ)
    if dJ is not None:
        res = fvec - J @ F
        for k in range(J.shape[1]):
            dJk = dJ[k]
            w = scipy.linalg.solve_triangular(R, dJk.T @ res, trans="T")
            dF[:, k] += scipy.linalg.solve_triangular(R, w) - scipy.linalg.solve_triangular(R, Q.T @ (dJk @ F))
    return F, dF


def ls_galerkin_rhs(problem, y, t=0.0, with_jacobian=False):
    rep = problem.representation
    u = rep.decode(y)
    fvec = problem.model.flux(u, t)
    F = rep.phi.T @ fvec
    if not with_jacobian:
        return F
    return F, rep.phi.T @ (problem.model.flux_jacobian(u, t) @ rep.phi)


def nm_galerkin_rhs(problem, y, t=0.0, with_jacobian=False):
    rep = problem.representation
    u, J = rep.decode_and_jacobian(y)
    fvec = problem.model.flux(u, t)
    if not with_jacobian:
        return galerkin_velocity(J, fvec)[0]
    JfJ = problem.model.flux_jacobian(u, t) @ J
    return galerkin_velocity(J, fvec, rep.jacobian_derivative(y), np.asarray(JfJ))


def _galerkin_rhs(problem):
    return nm_galerkin_rhs if problem.representation.nonlinear else ls_galerkin_rhs


# --- time marching ---------------------------------------------------------


def _galerkin_march(rhs, y0, integrator, grid, tol, max_iter):
    """March ``dy/dt = rhs(y, t)``; ``rhs(y, t, True)`` also returns ``dF/dy``."""
    f = len(y0)
    Y = np.empty((grid.nt + 1, f))
    Y[0] = y0
    iters = []
    Fhist = [rhs(y0, 0.0)]
    eye = np.eye(f)
    for n in range(1, grid.nt + 1):
        t_n = grid.time(n)
        if integrator == "rk2":
            t0 = grid.time(n - 1)
            half = Y[n - 1] + 0.5 * grid.dt * rhs(Y[n - 1], t0)
            Y[n] = Y[n - 1] + grid.dt * rhs(half, t0 + 0.5 * grid.dt)
            iters.append(0)
            continue
        scheme = startup_scheme(get_scheme(integrator), n)
        a0, b0 = scheme.alpha[0], scheme.beta[0]
        const = np.zeros(f)
        for j in range(1, scheme.k + 1):
            const += scheme.alpha[j] * Y[n - j]
            if scheme.beta[j] != 0.0:
                const -= grid.dt * scheme.beta[j] * Fhist[-j]
        cache = _Cached(lambda y: rhs(y, t_n, True))

        def res(y):
            return a0 * y + const - grid.dt * b0 * cache(y)[0]

        def jac(y):
            return a0 * eye - (grid.dt * b0) * cache(y)[1]

        try:
            out = newton_step_solve(res, jac, Y[n - 1], tol=tol, max_iter=max_iter)
        except ConvergenceError as exc:
            raise ConvergenceError(str(exc), iterations=exc.iterations, step=n) from exc
        Y[n] = out.x
        iters.append(out.iterations)
        Fhist.append(cache(out.x)[0])
        if len(Fhist) > 3:
            Fhist.pop(0)
    return Y, iters


def lspg_step(problem, history, flux_history, t_n, n=None, tol=GN_TOL, max_iter=GN_MAX_ITER):
    """One LSPG step. ``history[j-1]`` is ``(y^{n-j}, u^{n-j})``; ``flux_history[j-1]``
    is ``f(u^{n-j})``. Returns the Gauss-Newton result and the accepted state."""
    scheme = get_scheme(problem.integrator)
    if n is not None:
        scheme = startup_scheme(scheme, n)
    rep, model, dt = problem.representation, problem.model, problem.grid.dt
    a0, b0 = scheme.alpha[0], scheme.beta[0]
    const = np.zeros(model.dim)
    for j in range(1, scheme.k + 1):
        const += scheme.alpha[j] * history[j - 1][1]
        if scheme.beta[j] != 0.0:
            const -= dt * scheme.beta[j] * flux_history[j - 1]

    def fun(y):
        u, J = rep.decode_and_jacobian(y)
        r = a0 * u + const - dt * b0 * model.flux(u, t_n)
        Jr = a0 * J - (dt * b0) * np.asarray(model.flux_jacobian(u, t_n) @ J)
        return r, Jr

    cache = _Cached(fun)
    out = gauss_newton(cache.residual, cache.jacobian, history[0][0], tol=tol, max_iter=max_iter)
    return out, rep.decode(out.x)


def _lspg_march(problem, y0, tol, max_iter):
    grid, model, rep = problem.grid, problem.model, problem.representation
    Y = np.empty((grid.nt + 1, len(y0)))
    Y[0] = y0
    u0 = rep.decode(y0)
    hist = [(y0, u0)]
    fl = [model.flux(u0, 0.0)]
    iters = []
    for n in range(1, grid.nt + 1):
        t_n = grid.time(n)
        try:
            out, u = lspg_step(problem, hist, fl, t_n, n=n, tol=tol, max_iter=max_iter)
        except ConvergenceError as exc:
            raise ConvergenceError(str(exc), iterations=exc.iterations, step=n) from exc
        Y[n] = out.x
        iters.append(out.iterations)
        hist.insert(0, (out.x, u))
        del hist[3:]
        fl.insert(0, model.flux(u, t_n))
        del fl[3:]
    return Y, iters


def run_rom(problem, tol=None, max_iter=None, kind=None):
    """March a non-hyper-reduced ROM from the encoded initial FOM state."""
    rep = problem.representation
    y0 = initial_latent(rep, problem.model.initial_state())
    start = time.perf_counter()
    if problem.projection == "lspg":
        Y, iters = _lspg_march(problem, y0, tol or GN_TOL, max_iter or GN_MAX_ITER)
    else:
        rhs = _galerkin_rhs(problem)
        Y, iters = _galerkin_march(
            lambda y, t, jac=False: rhs(problem, y, t, jac),
            y0, problem.integrator, problem.grid, tol or NEWTON_TOL, max_iter or NEWTON_MAX_ITER,
        )
    wall = time.perf_counter() - start
    if kind is None:
        kind = ("nm-" if rep.nonlinear else "ls-") + problem.projection
    return RomTrajectory(Y, rep, problem.model.mu, problem.grid.dt, kind, iters, wall)

