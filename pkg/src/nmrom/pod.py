"""Snapshot assembly, normalization statistics and POD bases."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError, RankDeficiencyError
from .linalg import RANK_TOL, thin_svd

TARGET_RANGES = {"[-1,1]": (-1.0, 1.0), "[0,1]": (0.0, 1.0)}


@dataclass
class NormalizationStats:
    """Affine map ``x -> u_scale * (x - u_ref)`` onto a target range."""

    u_scale: np.ndarray
    u_ref: np.ndarray
    target: str = "[-1,1]"

    def __post_init__(self):
        self.u_scale = np.asarray(self.u_scale, dtype=np.float64)
        self.u_ref = np.asarray(self.u_ref, dtype=np.float64)
        if self.u_scale.shape != self.u_ref.shape:
            raise DimensionMismatchError("u_scale and u_ref must have the same shape")
        if np.any(self.u_scale <= 0):
            raise ValueError("u_scale entries must be positive")
        if self.target not in TARGET_RANGES:
            raise ValueError(f"target must be one of {sorted(TARGET_RANGES)}")

    def normalize(self, X):
        """Rows of ``X`` are states."""
        return self.u_scale * (X - self.u_ref)

    def unnormalize(self, Xn):
        return Xn / self.u_scale + self.u_ref

    @classmethod
    def identity(cls, m):
        return cls(np.ones(m), np.zeros(m))


MIN_SPAN_RATIO = 1e-3


def compute_normalization(S, target="[-1,1]", min_span_ratio=MIN_SPAN_RATIO):
    """Per-feature stats sending the min/max of each row of ``S`` onto ``target``.

    ``S`` is an ``m x N`` snapshot matrix. Spans are floored at
    ``min_span_ratio`` times the largest feature span: features that barely
    move (e.g. round-off ahead of a front) would otherwise be blown up to the
    full range and dominate the training loss. Such a feature occupies a
    sub-interval of ``target`` starting at its lower end. A constant feature
    gets scale 1 and reference equal to its value, so it maps to 0.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] < 1:
        raise DimensionMismatchError(f"snapshot matrix must be 2D with >= 1 column, got {S.shape}")
    if min_span_ratio < 0:
        raise ValueError("min_span_ratio must be >= 0")
    lo, hi = TARGET_RANGES[target]
    smin = S.min(axis=1)
    smax = S.max(axis=1)
    span = smax - smin
    const = span == 0.0
    span = np.maximum(span, min_span_ratio * span.max())
    scale = np.where(const, 1.0, (hi - lo) / np.where(const, 1.0, span))
    # solve scale*(smin - ref) = lo for ref
    ref = np.where(const, smin, smin - lo / scale)
    return NormalizationStats(scale, ref, target)


@dataclass
class SnapshotMatrix:
    """Columns are ``u^n(mu_k) - u_ref``, time-major within each parameter."""

    data: np.ndarray
    parameters: list = field(default_factory=list)
    nt: int = 0

    @property
    def shape(self):
        return self.data.shape

    def column(self, k, n):
        return self.data[:, k * (self.nt + 1) + n]


def assemble_snapshots(trajectories, u_ref=None):
    """Stack every state of every trajectory as a column, minus ``u_ref``."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("need at least one trajectory")
    m = trajectories[0].states.shape[1]
    nt = trajectories[0].nt
    for tr in trajectories:
        if tr.states.shape[1] != m:
            raise DimensionMismatchError(f"state dims differ: {tr.states.shape[1]} vs {m}")
    ref = np.zeros(m) if u_ref is None else np.asarray(u_ref, dtype=np.float64)
    if ref.shape != (m,):
        raise DimensionMismatchError(f"u_ref has shape {ref.shape}, expected ({m},)")
    data = np.concatenate([tr.states for tr in trajectories], axis=0).T - ref[:, None]
    return SnapshotMatrix(np.ascontiguousarray(data), [tr.mu for tr in trajectories], nt)


@dataclass(frozen=True)
class PodBasis:
    phi: np.ndarray
    singular_values: np.ndarray

    @property
    def n_s(self):
        return self.phi.shape[1]


def numerical_rank(sigma):
    if len(sigma) == 0 or sigma[0] == 0.0:
        return 0
    return int(np.sum(sigma > RANK_TOL * sigma[0]))


def compute_pod_basis(S, n_s):
    """Leading ``n_s`` left singular vectors of the snapshot matrix."""
    data = S.data if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=np.float64)
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    svd = thin_svd(data)
    rank = numerical_rank(svd.sigma)
    if n_s > rank:
        raise RankDeficiencyError(f"requested {n_s} basis vectors but snapshot rank is {rank}")
    return PodBasis(np.ascontiguousarray(svd.U[:, :n_s]), svd.sigma.copy())


def _ratio(num_sq, states):
    den = float(np.sum(np.asarray(states) ** 2))
    if den == 0.0:
        raise ZeroDivisionError("all reference states are zero")
    return float(np.sqrt(num_sq / den))


def linear_projection_error(traj, phi, u_ref=None):
    """Relative error of projecting every state onto ``u_ref + span(phi)``."""
    states = traj.states if hasattr(traj, "states") else np.asarray(traj)
    phi = phi.phi if isinstance(phi, PodBasis) else np.asarray(phi)
    if phi.ndim != 2 or phi.shape[1] < 1:
        raise ValueError("basis must have at least one column")
    if phi.shape[0] != states.shape[1]:
        raise DimensionMismatchError(f"basis rows {phi.shape[0]} != state dim {states.shape[1]}")
    ref = 0.0 if u_ref is None else u_ref
    D = (states - ref).T
    E = D - phi @ (phi.T @ D)
    return _ratio(float(np.sum(E**2)), states)


def validation_split(n, fraction, seed):
    """Seeded uniformly random split of ``range(n)`` into (train, validation)."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("validation fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(fraction * n))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
