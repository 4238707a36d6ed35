"""Semi-discretized Burgers models.

Both models expose the same surface:

* ``dim`` - state dimension ``m``
* ``initial_state()``
* ``flux(u, t=0.0)`` and ``flux_jacobian(u, t=0.0)`` (CSR)
* ``stencil_neighbors(indices)`` - indices whose values the flux at
  ``indices`` depends on
* ``sampled(samples)`` - a :class:`SampledFlux` that evaluates the flux and its
  Jacobian at ``samples`` from state values on the closure only
* ``components`` - list of slices, one per physical field

The 1D model is periodic on ``[0, 2]`` with a first-order upwind (backward)
difference. The 2D model is on ``[0, 1]^2`` with homogeneous Dirichlet data;
advection uses backward differences and diffusion the 5-point Laplacian. The
2D state is ``(U; V)`` with interior points ordered x-fastest.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError


@dataclass(frozen=True)
class Mesh1D:
    nx: int

    def __post_init__(self):
        if self.nx < 3:
            raise ValueError(f"nx must be >= 3, got {self.nx}")

    @property
    def dx(self):
        return 2.0 / (self.nx - 1)

    @property
    def x(self):
        # the last grid point aliases the first (periodic)
        return np.arange(self.nx - 1) * self.dx


@dataclass(frozen=True)
class Mesh2D:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"nx, ny must be >= 4, got {self.nx}, {self.ny}")

    @property
    def dx(self):
        return 1.0 / (self.nx - 1)

    @property
    def dy(self):
        return 1.0 / (self.ny - 1)

    @property
    def nx_int(self):
        return self.nx - 2

    @property
    def ny_int(self):
        return self.ny - 2

    @property
    def n_xy(self):
        return self.nx_int * self.ny_int

    def interior_coords(self):
        """``(x, y)`` of the interior points in state order (x fastest)."""
        xs = np.arange(1, self.nx - 1) * self.dx
        ys = np.arange(1, self.ny - 1) * self.dy
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        return X.ravel(), Y.ravel()


def _as_state(u, dim):
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (dim,):
        raise DimensionMismatchError(f"expected state of shape ({dim},), got {u.shape}")
    return u


def _check_indices(indices, dim):
    idx = np.unique(np.asarray(indices, dtype=np.int64).ravel())
    if idx.size and (idx[0] < 0 or idx[-1] >= dim):
        raise IndexError(f"indices out of range [0, {dim})")
    return idx


class SampledFlux:
    """Flux entries at a fixed sample set, evaluated from closure values.

    ``closure`` is the sorted index set ``H``; callers pass ``u_H = u[closure]``.
    ``sample_pos`` gives the position of each sample inside ``closure``.
    """

    def __init__(self, model, samples):
        self.model = model
        self.samples = _check_indices(samples, model.dim)
        self.closure = model.stencil_neighbors(self.samples)
        self.sample_pos = np.searchsorted(self.closure, self.samples)
        self._setup()

    def _pos(self, idx):
        # -1 marks a neighbor on the Dirichlet boundary (value 0)
        idx = np.asarray(idx)
        pos = np.searchsorted(self.closure, np.where(idx < 0, 0, idx))
        return np.where(idx < 0, -1, pos)


class _SampledFlux1D(SampledFlux):
    def _setup(self):
        m = self.model.dim
        self._self = self.sample_pos
        self._prev = np.searchsorted(self.closure, (self.samples - 1) % m)

    def flux(self, uH, t=0.0):
        u = uH[self._self]
        return -u * (u - uH[self._prev]) / self.model.dx

    def jacobian(self, uH, t=0.0):
        dx = self.model.dx
        u = uH[self._self]
        up = uH[self._prev]
        rows = np.arange(len(self.samples))
        J = np.zeros((len(self.samples), len(self.closure)))
        np.add.at(J, (rows, self._self), -(2.0 * u - up) / dx)
        np.add.at(J, (rows, self._prev), u / dx)
        return J


class _SampledFlux2D(SampledFlux):
    def _setup(self):
        model = self.model
        n = model.n_xy
        comp = self.samples // n  # 0 -> u equation, 1 -> v equation
        p = self.samples % n
        W, E, S, N = model._neighbors(p)
        off_own = comp * n
        off_other = (1 - comp) * n
        shift = lambda q, off: np.where(q < 0, -1, q + off)
        self._comp = comp
        self._c = self._pos(p + off_own)
        self._w = self._pos(shift(W, off_own))
        self._e = self._pos(shift(E, off_own))
        self._s = self._pos(shift(S, off_own))
        self._n = self._pos(shift(N, off_own))
        self._other = self._pos(p + off_other)

    def _values(self, uH):
        pad = np.append(uH, 0.0)  # index -1 reads the boundary zero
        return (pad[self._c], pad[self._w], pad[self._e], pad[self._s], pad[self._n], pad[self._other])

    def flux(self, uH, t=0.0):
        m = self.model
        c, w, e, s, n, o = self._values(uH)
        # own field q, advecting velocities a_x = u, a_y = v at the point
        ax = np.where(self._comp == 0, c, o)
        ay = np.where(self._comp == 0, o, c)
        return (
            -ax * (c - w) / m.dx
            - ay * (c - s) / m.dy
            + (e - 2.0 * c + w) / (m.reynolds * m.dx**2)
            + (n - 2.0 * c + s) / (m.reynolds * m.dy**2)
        )

    def jacobian(self, uH, t=0.0):
        m = self.model
        c, w, e, s, n, o = self._values(uH)
        is_u = self._comp == 0
        ax = np.where(is_u, c, o)
        ay = np.where(is_u, o, c)
        kx = 1.0 / (m.reynolds * m.dx**2)
        ky = 1.0 / (m.reynolds * m.dy**2)
        d_c = -ax / m.dx - ay / m.dy - 2.0 * kx - 2.0 * ky
        # derivative of the advecting velocity that equals the own field
        d_c = d_c - np.where(is_u, (c - w) / m.dx, (c - s) / m.dy)
        d_o = -np.where(is_u, (c - s) / m.dy, (c - w) / m.dx)
        d_w = ax / m.dx + kx
        d_s = ay / m.dy + ky
        rows = np.arange(len(self.samples))
        J = np.zeros((len(self.samples), len(self.closure) + 1))
        for pos, val in ((self._c, d_c), (self._w, d_w), (self._e, kx), (self._s, d_s), (self._n, ky), (self._other, d_o)):
            np.add.at(J, (rows, pos), val)
        return J[:, :-1]


class Model1D:
    """Periodic inviscid Burgers on ``[0, 2]``; state ``(u_1, ..., u_{nx-1})``."""

    def __init__(self, mesh, mu):
        if isinstance(mesh, int):
            mesh = Mesh1D(mesh)
        self.mesh = mesh
        self.mu = float(mu)
        self.dim = mesh.nx - 1
        self.dx = mesh.dx
        self.components = [slice(0, self.dim)]

    def initial_state(self):
        x = self.mesh.x
        u = np.ones(self.dim)
        inside = (x >= 0.0) & (x <= 1.0)
        u[inside] = 1.0 + 0.5 * self.mu * (np.sin(2.0 * np.pi * x[inside] - 0.5 * np.pi) + 1.0)
        return u

    def flux(self, u, t=0.0):
        u = _as_state(u, self.dim)
        return -u * (u - np.roll(u, 1)) / self.dx

    def flux_jacobian(self, u, t=0.0):
        u = _as_state(u, self.dim)
        m = self.dim
        up = np.roll(u, 1)
        i = np.arange(m)
        rows = np.concatenate([i, i])
        cols = np.concatenate([i, (i - 1) % m])
        vals = np.concatenate([-(2.0 * u - up) / self.dx, u / self.dx])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))

    def stencil_neighbors(self, indices):
        idx = _check_indices(indices, self.dim)
        return np.union1d(idx, (idx - 1) % self.dim)

    def sampled(self, samples):
        return _SampledFlux1D(self, samples)


class Model2D:
    """Viscous Burgers on ``[0, 1]^2`` with zero Dirichlet data; state ``(U; V)``."""

    def __init__(self, mesh, mu, reynolds=10000.0):
        if isinstance(mesh, int):
            mesh = Mesh2D(mesh, mesh)
        if reynolds <= 0:
            raise ValueError("reynolds must be positive")
        self.mesh = mesh
        self.mu = float(mu)
        self.reynolds = float(reynolds)
        self.dx = mesh.dx
        self.dy = mesh.dy
        self.nx_int = mesh.nx_int
        self.ny_int = mesh.ny_int
        self.n_xy = mesh.n_xy
        self.dim = 2 * self.n_xy
        self.components = [slice(0, self.n_xy), slice(self.n_xy, self.dim)]
        self._full = None

    def _neighbors(self, p):
        """West/East/South/North interior indices of points ``p`` (-1 on boundary)."""
        nxi, nyi = self.nx_int, self.ny_int
        i = p % nxi
        j = p // nxi
        W = np.where(i > 0, p - 1, -1)
        E = np.where(i < nxi - 1, p + 1, -1)
        S = np.where(j > 0, p - nxi, -1)
        N = np.where(j < nyi - 1, p + nxi, -1)
        return W, E, S, N

    def initial_state(self):
        x, y = self.mesh.interior_coords()
        val = self.mu * np.sin(2.0 * np.pi * x) * np.sin(2.0 * np.pi * y)
        val[~((x <= 0.5) & (y <= 0.5))] = 0.0
        return np.concatenate([val, val.copy()])

    def _full_plan(self):
        if self._full is None:
            self._full = _SampledFlux2D(self, np.arange(self.dim))
        return self._full

    def flux(self, u, t=0.0):
        u = _as_state(u, self.dim)
        return self._full_plan().flux(u)

    def flux_jacobian(self, u, t=0.0):
        u = _as_state(u, self.dim)
        plan = self._full_plan()
        c, w, e, s, n, o = plan._values(u)
        is_u = plan._comp == 0
        ax = np.where(is_u, c, o)
        ay = np.where(is_u, o, c)
        kx = 1.0 / (self.reynolds * self.dx**2)
        ky = 1.0 / (self.reynolds * self.dy**2)
        d_c = -ax / self.dx - ay / self.dy - 2.0 * kx - 2.0 * ky
        d_c -= np.where(is_u, (c - w) / self.dx, (c - s) / self.dy)
        d_o = -np.where(is_u, (c - s) / self.dy, (c - w) / self.dx)
        rows_all, cols_all, vals_all = [], [], []
        r = np.arange(self.dim)
        for pos, val in (
            (plan._c, d_c),
            (plan._w, ax / self.dx + kx),
            (plan._e, np.full(self.dim, kx)),
            (plan._s, ay / self.dy + ky),
            (plan._n, np.full(self.dim, ky)),
            (plan._other, d_o),
        ):
            keep = pos >= 0
            rows_all.append(r[keep])
            cols_all.append(pos[keep])
            vals_all.append(np.broadcast_to(val, r.shape)[keep])
        return sp.csr_matrix(
            (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(self.dim, self.dim),
        )

    def diffusion_operator(self):
        """``(1/(Re dx^2)) D_x + (1/(Re dy^2)) D_y`` on one component."""
        nxi, nyi = self.nx_int, self.ny_int
        Dxb = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(nxi, nxi))
        Dyb = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(nyi, nyi))
        Dx = sp.kron(sp.identity(nyi), Dxb)
        Dy = sp.kron(Dyb, sp.identity(nxi))
        return (Dx / (self.reynolds * self.dx**2) + Dy / (self.reynolds * self.dy**2)).tocsr()

    def stencil_neighbors(self, indices):
        idx = _check_indices(indices, self.dim)
        n = self.n_xy
        comp = idx // n
        p = idx % n
        W, E, S, N = self._neighbors(p)
        own = comp * n
        parts = [idx, p + (1 - comp) * n]
        for q in (W, E, S, N):
            parts.append(np.where(q < 0, -1, q + own))
        out = np.unique(np.concatenate(parts))
        return out[out >= 0]

    def sampled(self, samples):
        return _SampledFlux2D(self, samples)


def make_model(problem, mu, nx, ny=None, reynolds=10000.0):
    if problem == "burgers1d":
        return Model1D(Mesh1D(nx), mu)
    if problem == "burgers2d":
        return Model2D(Mesh2D(nx, ny if ny is not None else nx), mu, reynolds)
    raise ValueError(f"unknown problem {problem!r}")
