"""Error metrics, a-posteriori error-bound checks and the flop-count model."""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError
from .linalg import spectral_norm
from .timestep import get_scheme, startup_scheme


def _states(traj):
    return np.asarray(traj.states if hasattr(traj, "states") else traj, dtype=np.float64)


@dataclass
class ErrorReport:
    max: float
    per_step: np.ndarray
    linear_projection: float = None
    nonlinear_projection: float = None


def max_relative_error(rom, fom):
    """``max_{n>=1} ||u~^n - u^n|| / ||u^n||``."""
    R, F = _states(rom), _states(fom)
    if R.shape != F.shape:
        raise DimensionMismatchError(f"trajectory shapes differ: {R.shape} vs {F.shape}")
    den = np.linalg.norm(F[1:], axis=1)
    if np.any(den == 0.0):
        raise ZeroDivisionError("FOM state with zero norm")
    per = np.linalg.norm(R[1:] - F[1:], axis=1) / den
    return ErrorReport(float(per.max()) if per.size else 0.0, per)


def estimate_lipschitz(model, states, pairs=(), t=0.0, spectral=True):
    """Lower estimate of the flux Lipschitz constant.

    Maximum of ``||f(a) - f(b)|| / ||a - b||`` over all pairs of ``states`` and
    the explicit ``pairs``, and (optionally) of ``||J_f||_2`` at each state.
    """
    states = [np.asarray(s, dtype=np.float64) for s in states]
    fluxes = [model.flux(s, t) for s in states]
    best = 0.0
    cand = list(itertools.combinations(range(len(states)), 2))
    for i, j in cand:
        d = np.linalg.norm(states[i] - states[j])
        if d > 0:
            best = max(best, np.linalg.norm(fluxes[i] - fluxes[j]) / d)
    for a, b in pairs:
        d = np.linalg.norm(a - b)
        if d > 0:
            best = max(best, np.linalg.norm(model.flux(a, t) - model.flux(b, t)) / d)
    if spectral:
        for s in states:
            J = model.flux_jacobian(s, t)
            J = J if sp.issparse(J) else np.asarray(J)
            best = max(best, spectral_norm(lambda x: J @ x, lambda y: J.T @ y, model.dim))
    return float(best)


BOUND_NOTE = (
    "gamma1/gamma2 are the realized per-step ratios ||P e||/(||P|| ||e||) and "
    "||P df||/(||P|| ||df||); a step is admissible when dt < gamma1|a0|/(gamma2|b0|L)"
)


@dataclass
class BoundStep:
    n: int
    lhs: float
    rhs: float
    gamma1: float
    gamma2: float
    admissible: bool

    @property
    def holds(self):
        return self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-14


@dataclass
class BoundCheckReport:
    variant: str
    L: float
    p_norm: float
    steps: list = field(default_factory=list)
    note: str = BOUND_NOTE

    @property
    def n_admissible(self):
        return sum(s.admissible for s in self.steps)

    @property
    def violations(self):
        return [s for s in self.steps if s.admissible and not s.holds]

    @property
    def ok(self):
        return not self.violations


def _ratio(num, den):
    # undefined ratio (zero vector): any value in (0, 1] makes the step valid
    return 1.0 if den == 0.0 else min(1.0, num / den)


def check_error_bound(variant, model, fom_states, rom_states, op, scheme, dt, L, p_norm=None):
    """Evaluate the per-step error bound for a hyper-reduced NM run.

    ``rom_states`` are the reconstructed states ``u_ref + g(y^n)``; ``op`` is the
    :class:`~nmrom.hyper.HyperReductionOperator` that defines ``P``.
    Failing admissibility is reported per step, never raised.
    """
    if variant not in ("nm-galerkin-hr", "nm-lspg-hr"):
        raise ValueError(f"unknown bound variant {variant!r}")
    U, R = _states(fom_states), _states(rom_states)
    if U.shape != R.shape:
        raise DimensionMismatchError(f"trajectory shapes differ: {U.shape} vs {R.shape}")
    if isinstance(scheme, str):
        scheme = get_scheme(scheme)
    pn = op.projector_norm() if p_norm is None else p_norm
    fU = np.array([model.flux(u, 0.0) for u in U])
    fR = np.array([model.flux(u, 0.0) for u in R])
    errs = np.linalg.norm(U - R, axis=1)
    report = BoundCheckReport(variant, float(L), float(pn))
    for n in range(1, U.shape[0]):
        sch = startup_scheme(scheme, n)
        a, b = sch.alpha, sch.beta
        res = np.zeros(model.dim)
        for j in range(sch.k + 1):
            res += a[j] * R[n - j]
            if b[j] != 0.0:
                res -= dt * b[j] * fR[n - j]
        e = U[n] - R[n]
        df = fU[n] - fR[n]
        g1 = _ratio(np.linalg.norm(op.project(e)), pn * np.linalg.norm(e))
        g2 = _ratio(np.linalg.norm(op.project(df)), pn * np.linalg.norm(df))
        denom = g1 * abs(a[0]) - g2 * abs(b[0]) * dt * L
        admissible = denom > 0.0
        if admissible:
            rhs = np.linalg.norm(op.project(res)) / (pn * denom)
            for j in range(1, sch.k + 1):
                rhs += (abs(a[j]) + abs(b[j]) * dt * L) / denom * errs[n - j]
        else:
            rhs = np.inf
        report.steps.append(BoundStep(n, float(errs[n]), float(rhs), float(g1), float(g2), bool(admissible)))
    return report


# --- flop model ------------------------------------------------------------

FLOP_KINDS = ("nm-lspg", "nm-lspg-hr", "ls-lspg", "ls-lspg-hr")


@dataclass(frozen=True)
class CostModelInput:
    m: float
    f: float
    z: float
    b: float
    delta_b: float
    beta: float = None  # fraction of sampled decoder columns; defaults to z/m

    def __post_init__(self):
        for name in ("m", "f", "z", "b", "delta_b"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.z > self.m:
            raise ValueError("closure size z cannot exceed m")
        if self.beta is not None and not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")

    @property
    def M2(self):
        return self.b + (self.m - 1) * self.delta_b

    @property
    def sampled_fraction(self):
        return self.z / self.m if self.beta is None else self.beta


def flop_estimate(kind, c):
    """Leading-order per-time-step flops with unit constants."""
    if kind == "nm-lspg":
        return c.m * c.b * c.f
    if kind == "nm-lspg-hr":
        return c.f * c.sampled_fraction * c.M2 + c.z * c.b * c.f + c.f * c.z**2
    if kind == "ls-lspg":
        return c.f**2 * c.m
    if kind == "ls-lspg-hr":
        return c.f**2 * c.z + c.f * c.z**2
    raise ValueError(f"unknown cost kind {kind!r}; choose from {FLOP_KINDS}")
