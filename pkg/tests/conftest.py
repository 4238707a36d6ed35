import numpy as np
import pytest
import scipy.sparse as sp

from nmrom.models import Model1D
from nmrom.timestep import TimeGrid, run_fom


class LinearModel:
    """u' = A u, for closed-form time-stepping checks."""

    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.dim = self.A.shape[0]
        self.mu = 0.0
        self.components = [slice(0, self.dim)]

    def initial_state(self):
        return np.ones(self.dim)

    def flux(self, u, t=0.0):
        return self.A @ u

    def flux_jacobian(self, u, t=0.0):
        return sp.csr_matrix(self.A)


def central_jacobian(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def coarse_1d():
    """Coarse 1D problem shared by the ROM tests (nx = 101, nt = 50)."""
    grid = TimeGrid.from_final_time(0.5, 50)
    trajs = {mu: run_fom(Model1D(101, mu), "be", grid) for mu in (0.9, 1.0, 1.1)}
    return grid, trajs


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").split("(")[0])):
            terminalreporter.write_line(line)
