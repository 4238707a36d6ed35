"""Time integration: linear multistep residuals, midpoint RK, Newton, FOM runs."""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConvergenceError, DimensionMismatchError, RankDeficiencyError

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 25


@dataclass(frozen=True)
class LinearMultistepScheme:
    """``sum_j alpha[j] u^{n-j} - dt sum_j beta[j] f^{n-j} = 0``."""

    name: str
    alpha: tuple
    beta: tuple

    def __post_init__(self):
        if len(self.alpha) != len(self.beta) or len(self.alpha) < 2:
            raise ValueError("alpha and beta must have the same length k+1 >= 2")
        if self.alpha[0] == 0.0:
            raise ValueError("alpha[0] must be nonzero")
        if abs(sum(self.alpha)) > 1e-14:
            raise ValueError("inconsistent scheme: sum(alpha) != 0")

    @property
    def k(self):
        return len(self.alpha) - 1

    @property
    def implicit(self):
        return self.beta[0] != 0.0


BE = LinearMultistepScheme("be", (1.0, -1.0), (1.0, 0.0))
AM2 = LinearMultistepScheme("am2", (1.0, -1.0), (0.5, 0.5))
BDF2 = LinearMultistepScheme("bdf2", (1.0, -4.0 / 3.0, 1.0 / 3.0), (2.0 / 3.0, 0.0, 0.0))
AB2 = LinearMultistepScheme("ab2", (1.0, -1.0, 0.0), (0.0, 1.5, -0.5))

SCHEMES = {s.name: s for s in (BE, AM2, BDF2, AB2)}
INTEGRATORS = ("be", "am2", "bdf2", "rk2")


def get_scheme(name):
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown multistep scheme {name!r}; choose from {sorted(SCHEMES)}") from None


def startup_scheme(scheme, n):
    """Scheme used at step ``n`` (1-based): BE until enough history exists."""
    return scheme if n >= scheme.k else BE


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    nt: int

    def __post_init__(self):
        if self.dt <= 0 or self.nt < 0:
            raise ValueError("dt must be positive and nt non-negative")

    @classmethod
    def from_final_time(cls, T, nt):
        return cls(dt=T / nt if nt else T, nt=nt)

    @property
    def T(self):
        return self.dt * self.nt

    def time(self, n):
        return n * self.dt


def lmm_residual(scheme, history, fluxes, dt):
    """Multistep residual; ``history[j]`` is ``u^{n-j}``, ``fluxes[j]`` is ``f^{n-j}``."""
    if len(history) != scheme.k + 1 or len(fluxes) != scheme.k + 1:
        raise DimensionMismatchError(
            f"{scheme.name} needs {scheme.k + 1} history/flux entries, got {len(history)}/{len(fluxes)}"
        )
    r = scheme.alpha[0] * np.asarray(history[0], dtype=np.float64)
    for a, u in zip(scheme.alpha[1:], history[1:]):
        r = r + a * u
    acc = scheme.beta[0] * np.asarray(fluxes[0], dtype=np.float64)
    for b, f in zip(scheme.beta[1:], fluxes[1:]):
        acc = acc + b * f
    return r - dt * acc


def _pair(u_n, u_prev):
    u_n = np.asarray(u_n, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    if u_n.shape != u_prev.shape:
        raise DimensionMismatchError(f"state shapes differ: {u_n.shape} vs {u_prev.shape}")
    return u_n, u_prev


def be_residual(model, u_n, u_prev, dt, t_n=0.0):
    u_n, u_prev = _pair(u_n, u_prev)
    f = model.flux(u_n, t_n)
    return u_n - u_prev - dt * f


def am2_residual(model, u_n, u_prev, dt, t=0.0):
    u_n, u_prev = _pair(u_n, u_prev)
    f_n = model.flux(u_n, t)
    f_prev = model.flux(u_prev, t - dt)
    return u_n - u_prev - dt * (0.5 * f_n + 0.5 * f_prev)


def bdf2_residual(model, u_n, u_prev, u_prev2, dt, t=0.0):
    u_n, u_prev = _pair(u_n, u_prev)
    f = model.flux(u_n, t)
    return u_n - (4.0 / 3.0) * u_prev + (1.0 / 3.0) * np.asarray(u_prev2) - dt * ((2.0 / 3.0) * f)


def midpoint_rk_step(model, u_prev, dt, t=0.0):
    """One explicit midpoint (2-stage Runge-Kutta) step from ``t`` to ``t + dt``."""
    u_half = u_prev + 0.5 * dt * model.flux(u_prev, t)
    return u_prev + dt * model.flux(u_half, t + 0.5 * dt)


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float


def _linear_solve(J, r):
    if sp.issparse(J):
        try:
            # minimum-degree on A^T+A beats COLAMD on the 2D stencil
            return spla.splu(J.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(r)
        except RuntimeError as exc:
            raise RankDeficiencyError(f"singular Jacobian: {exc}") from exc
    try:
        return np.linalg.solve(J, r)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"singular Jacobian: {exc}") from exc


def newton_step_solve(residual, jacobian, guess, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Solve ``residual(x) = 0`` by Newton's method from ``guess``.

    Converged when ``||r(x)|| <= tol * max(1, ||r(guess)||)``.
    """
    x = np.array(guess, dtype=np.float64, copy=True)
    r = residual(x)
    target = tol * max(1.0, np.linalg.norm(r))
    norm = np.linalg.norm(r)
    it = 0
    while norm > target:
        if it >= max_iter:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations (|r|={norm:.3e}, target {target:.3e})",
                iterations=it,
            )
        x = x - _linear_solve(jacobian(x), r)
        r = residual(x)
        norm = np.linalg.norm(r)
        if not np.isfinite(norm):
            raise ConvergenceError("Newton iterate became non-finite", iterations=it + 1)
        it += 1
    return NewtonResult(x=x, iterations=it, residual_norm=float(norm))


@dataclass
class Trajectory:
    """States ``u^0 .. u^nt`` stored row-wise, shape ``(nt + 1, m)``."""

    states: np.ndarray
    mu: float
    dt: float
    integrator: str = "be"
    iterations: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def nt(self):
        return self.states.shape[0] - 1


def implicit_step(model, scheme, history, flux_history, dt, t_n, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Solve one implicit multistep step. ``history[0]`` is ``u^{n-1}``."""
    a0, b0 = scheme.alpha[0], scheme.beta[0]
    const = np.zeros_like(history[0])
    for a, u in zip(scheme.alpha[1:], history):
        const = const + a * u
    for b, f in zip(scheme.beta[1:], flux_history):
        if b != 0.0:
            const = const - dt * b * f
    eye = sp.identity(model.dim, format="csr")

    def res(u):
        return a0 * u + const - dt * b0 * model.flux(u, t_n)

    def jac(u):
        return a0 * eye - (dt * b0) * model.flux_jacobian(u, t_n)

    return newton_step_solve(res, jac, history[0], tol=tol, max_iter=max_iter)


def run_fom(model, integrator, grid, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """March the full-order model from its initial state over ``grid``."""
    u0 = model.initial_state()
    states = np.empty((grid.nt + 1, model.dim))
    states[0] = u0
    iterations = []
    fluxes = [model.flux(u0, 0.0)]
    start = time.perf_counter()
    for n in range(1, grid.nt + 1):
        t_n = grid.time(n)
        if integrator == "rk2":
            states[n] = midpoint_rk_step(model, states[n - 1], grid.dt, grid.time(n - 1))
            iterations.append(0)
            continue
        scheme = startup_scheme(get_scheme(integrator), n)
        if not scheme.implicit:
            raise ValueError(f"FOM integrator {integrator!r} is explicit multistep; use rk2")
        hist = [states[n - 1 - j] for j in range(scheme.k)]
        fhist = [fluxes[-1 - j] for j in range(scheme.k)]
        try:
            res = implicit_step(model, scheme, hist, fhist, grid.dt, t_n, tol, max_iter)
        except ConvergenceError as exc:
            raise ConvergenceError(str(exc), iterations=exc.iterations, step=n) from exc
        states[n] = res.x
        iterations.append(res.iterations)
        fluxes.append(model.flux(res.x, t_n))
        if len(fluxes) > 3:
            fluxes.pop(0)
    wall = time.perf_counter() - start
    return Trajectory(states=states, mu=model.mu, dt=grid.dt, integrator=integrator, iterations=iterations, wall_time=wall)
