import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LinearModel, central_jacobian, rel
from nmrom.autoencoder import Decoder, Encoder
from nmrom.error_analysis import max_relative_error
from nmrom.exceptions import ConvergenceError, DimensionMismatchError, RankDeficiencyError
from nmrom.linalg import pseudo_inverse
from nmrom.models import Model1D
from nmrom.pod import assemble_snapshots, compute_pod_basis
from nmrom.rom import (
    LinearRepresentation,
    ManifoldRepresentation,
    RomProblem,
    block_linear,
    galerkin_velocity,
    gauss_newton,
    initial_latent,
    ls_galerkin_rhs,
    nm_galerkin_rhs,
    run_rom,
)
from nmrom.timestep import TimeGrid


def linear_manifold(phi, u_ref):
    """Manifold representation whose decoder is exactly ``y -> phi y``."""
    f = phi.shape[1]
    dec = Decoder(np.eye(f), np.zeros(f), phi, "linear")
    enc = Encoder(phi.T, np.zeros(f), np.eye(f), np.zeros(f), "linear")
    return ManifoldRepresentation([dec], [enc], u_ref)


@pytest.fixture(scope="module")
def pod5(coarse_1d):
    grid, trajs = coarse_1d
    S = assemble_snapshots([trajs[0.9], trajs[1.1]])
    return compute_pod_basis(S, 5).phi


# --- representations -------------------------------------------------------


def test_initial_latent_linear(rng):
    phi, _ = np.linalg.qr(rng.standard_normal((12, 3)))
    ref = rng.standard_normal(12)
    rep = LinearRepresentation(phi, ref)
    np.testing.assert_array_equal(initial_latent(rep, ref), 0.0)
    y = rng.standard_normal(3)
    u0 = ref + phi @ y
    np.testing.assert_allclose(rep.decode(initial_latent(rep, u0)), u0, atol=1e-13)
    with pytest.raises(DimensionMismatchError):
        rep.encode(np.ones(11))


def test_initial_latent_manifold_round_trip(rng):
    from nmrom.autoencoder import build_mask_1d, extract_scaled_maps, init_params

    p = init_params(build_mask_1d(9, 3, 2), 2, 6, "swish", seed=0)
    maps = extract_scaled_maps(p)
    rep = ManifoldRepresentation.from_scaled_maps([maps])
    u0 = rng.standard_normal(9)
    np.testing.assert_allclose(rep.decode(initial_latent(rep, u0)), maps.decode(maps.encode(u0)), rtol=1e-14)


def test_block_linear_shapes(rng):
    a, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    b, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    rep = block_linear([a, b])
    assert rep.phi.shape == (12, 5)
    np.testing.assert_array_equal(rep.phi[:6, 2:], 0.0)


def test_problem_validation(rng):
    model = Model1D(11, 1.0)
    with pytest.raises(DimensionMismatchError):
        RomProblem(model, "be", TimeGrid(0.1, 2), LinearRepresentation(np.eye(9)), "lspg")
    with pytest.raises(ValueError):
        RomProblem(model, "rk2", TimeGrid(0.1, 2), LinearRepresentation(np.eye(10)), "lspg")


# --- Galerkin velocities ---------------------------------------------------


def test_ls_galerkin_rhs_examples(rng):
    model = Model1D(21, 1.0)
    grid = TimeGrid(0.01, 1)
    u = 1 + rng.random(20)
    full = RomProblem(model, "be", grid, LinearRepresentation(np.eye(20)), "galerkin")
    np.testing.assert_allclose(ls_galerkin_rhs(full, u), model.flux(u), rtol=1e-15)
    phi, _ = np.linalg.qr(rng.standard_normal((20, 4)))
    ref = np.ones(20)
    prob = RomProblem(model, "be", grid, LinearRepresentation(phi, ref), "galerkin")
    y = 0.1 * rng.standard_normal(4)
    np.testing.assert_allclose(ls_galerkin_rhs(prob, y), pseudo_inverse(phi) @ model.flux(ref + phi @ y), atol=1e-10)
    zero = RomProblem(LinearModel(np.zeros((20, 20))), "be", grid, LinearRepresentation(phi), "galerkin")
    np.testing.assert_array_equal(ls_galerkin_rhs(zero, y), 0.0)


def test_nm_galerkin_linear_decoder_reduces(rng):
    model = Model1D(21, 1.0)
    phi, _ = np.linalg.qr(rng.standard_normal((20, 4)))
    ref = np.ones(20)
    grid = TimeGrid(0.01, 1)
    ls = RomProblem(model, "be", grid, LinearRepresentation(phi, ref), "galerkin")
    nm = RomProblem(model, "be", grid, linear_manifold(phi, ref), "galerkin")
    y = 0.1 * rng.standard_normal(4)
    a, Ja = ls_galerkin_rhs(ls, y, with_jacobian=True)
    b, Jb = nm_galerkin_rhs(nm, y, with_jacobian=True)
    np.testing.assert_allclose(b, a, atol=1e-12)
    np.testing.assert_allclose(Jb, Ja, atol=1e-10)


def test_galerkin_velocity_normal_equations_and_derivative(rng):
    m, f = 15, 3
    A = rng.standard_normal((m, m))
    W1 = rng.standard_normal((8, f))
    b1 = rng.standard_normal(8)
    W2 = rng.standard_normal((m, 8))
    dec = Decoder(W1, b1, W2, "swish")

    def velocity(y):
        J = dec.jacobian(y)
        return galerkin_velocity(J, A @ dec(y))[0]

    y = rng.standard_normal(f)
    J = dec.jacobian(y)
    fvec = A @ dec(y)
    np.testing.assert_allclose(velocity(y), np.linalg.solve(J.T @ J, J.T @ fvec), rtol=1e-9)
    _, dF = galerkin_velocity(J, fvec, dec.jacobian_derivative(y), A @ J)
    assert rel(central_jacobian(velocity, y), dF) <= 1e-6


def test_galerkin_velocity_rank_deficient():
    J = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
    with pytest.raises(RankDeficiencyError):
        galerkin_velocity(J, np.ones(3))


# --- Gauss-Newton ----------------------------------------------------------


def test_gauss_newton_linear_one_iteration(rng):
    A = rng.standard_normal((8, 3))
    b = rng.standard_normal(8)
    out = gauss_newton(lambda x: A @ x - b, lambda x: A, np.zeros(3))
    assert out.iterations == 1
    np.testing.assert_allclose(out.x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-12)
    again = gauss_newton(lambda x: A @ x - b, lambda x: A, out.x)
    assert again.iterations == 0


def rosen(x):
    return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])


def rosen_jac(x):
    return np.array([[-20.0 * x[0], 10.0], [-1.0, 0.0]])


def test_gauss_newton_rosenbrock_matches_grid_minimum():
    out = gauss_newton(rosen, rosen_jac, np.array([-1.2, 1.0]))
    g = np.linspace(-2, 2, 401)
    X0, X1 = np.meshgrid(g, g, indexing="ij")
    obj = (10 * (X1 - X0**2)) ** 2 + (1 - X0) ** 2
    k = np.unravel_index(np.argmin(obj), obj.shape)
    assert abs(out.x[0] - X0[k]) <= 0.01 and abs(out.x[1] - X1[k]) <= 0.01
    np.testing.assert_allclose(out.x, [1.0, 1.0], atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_gauss_newton_objective_monotone(a, b):
    accepted = []

    def jac(x):
        r = rosen(x)
        accepted.append(0.5 * r @ r)
        return rosen_jac(x)

    try:
        gauss_newton(rosen, jac, np.array([a, b]), max_iter=50)
    except (ConvergenceError, RankDeficiencyError):
        pass
    assert all(x >= y for x, y in zip(accepted, accepted[1:]))


def test_gauss_newton_max_iter():
    with pytest.raises(ConvergenceError):
        gauss_newton(rosen, rosen_jac, np.array([-1.2, 1.0]), max_iter=1)


# --- full runs on the coarse 1D problem ------------------------------------


def test_identity_basis_reproduces_fom(coarse_1d):
    grid, trajs = coarse_1d
    model = Model1D(101, 1.0)
    rep = LinearRepresentation(np.eye(100))
    for proj in ("lspg", "galerkin"):
        tr = run_rom(RomProblem(model, "be", grid, rep, proj))
        assert max_relative_error(tr, trajs[1.0]).max <= 1e-8


def test_linear_decoder_nm_matches_ls(coarse_1d, pod5):
    grid, _ = coarse_1d
    model = Model1D(101, 1.0)
    ref = np.zeros(100)
    for proj in ("lspg", "galerkin"):
        ls = run_rom(RomProblem(model, "be", grid, LinearRepresentation(pod5, ref), proj))
        nm = run_rom(RomProblem(model, "be", grid, linear_manifold(pod5, ref), proj))
        assert nm.kind == "nm-" + proj and ls.kind == "ls-" + proj
        assert np.abs(nm.states - ls.states).max() <= 1e-10 * np.abs(ls.states).max()


def test_reconstruction_consistency(coarse_1d, pod5):
    grid, _ = coarse_1d
    rep = LinearRepresentation(pod5, np.ones(100))
    tr = run_rom(RomProblem(Model1D(101, 1.0), "be", grid, rep, "lspg"))
    for n in (0, 10, 50):
        np.testing.assert_array_equal(tr.states[n], rep.decode(tr.latent[n]))
    assert tr.nt == 50 and len(tr.iterations) == 50 and tr.wall_time > 0


def test_zero_steps_gives_initial_state(pod5):
    rep = LinearRepresentation(pod5)
    model = Model1D(101, 1.0)
    tr = run_rom(RomProblem(model, "be", TimeGrid(0.01, 0), rep, "lspg"))
    assert tr.states.shape == (1, 100)
    np.testing.assert_allclose(tr.states[0], rep.decode(rep.encode(model.initial_state())))


@pytest.mark.parametrize("integrator", ["am2", "bdf2", "rk2"])
def test_other_integrators_with_identity_basis(integrator):
    model = Model1D(51, 1.0)
    grid = TimeGrid.from_final_time(0.1, 10)
    from nmrom.timestep import run_fom

    fom = run_fom(model, integrator, grid)
    tr = run_rom(RomProblem(model, integrator, grid, LinearRepresentation(np.eye(50)), "galerkin"))
    assert max_relative_error(tr, fom).max <= 1e-8
    if integrator != "rk2":
        tr = run_rom(RomProblem(model, integrator, grid, LinearRepresentation(np.eye(50)), "lspg"))
        assert max_relative_error(tr, fom).max <= 1e-8


def test_manifold_reconstruction_consistency(rng):
    from nmrom.autoencoder import build_mask_1d, extract_scaled_maps, init_params
    from nmrom.rom import RomTrajectory

    maps = extract_scaled_maps(init_params(build_mask_1d(9, 3, 2), 2, 6, "swish", seed=0))
    rep = ManifoldRepresentation.from_scaled_maps([maps])
    Y = rng.standard_normal((6, 2))
    tr = RomTrajectory(Y, rep, 1.0, 0.1)
    for n in range(6):
        np.testing.assert_array_equal(tr.states[n], rep.decode(Y[n]))
