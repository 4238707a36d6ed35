import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmrom import io
from nmrom.autoencoder import build_mask_1d, init_params
from nmrom.config import default_config, dump_config, load_config, parse_config
from nmrom.exceptions import ConfigError, FormatError
from nmrom.pod import PodBasis
from nmrom.timestep import Trajectory


def test_array_round_trip_bitwise(tmp_path, rng):
    A = rng.standard_normal((7, 3))
    io.save_array(tmp_path / "a.arr", A, "basis")
    B, h = io.load_array(tmp_path / "a.arr")
    assert B.tobytes() == A.tobytes()
    assert h["dims"] == [7, 3] and h["ordering"] == "column-major"
    raw = (tmp_path / "a.arr").read_bytes().split(b"\n", 1)[1]
    assert np.array_equal(np.frombuffer(raw, "<f8"), A.ravel(order="F"))


def test_trajectory_and_basis_round_trip(tmp_path, rng):
    tr = Trajectory(rng.standard_normal((5, 4)), 1.05, 0.01, "bdf2", wall_time=0.5)
    io.save_trajectory(tmp_path / "t.traj", tr)
    back, h = io.load_trajectory(tmp_path / "t.traj")
    assert np.array_equal(back.states, tr.states)
    assert (back.mu, back.dt, back.integrator) == (1.05, 0.01, "bdf2")
    b = PodBasis(rng.standard_normal((6, 2)), np.array([3.0, 1.0]))
    io.save_basis(tmp_path / "b.pod", b)
    back, _ = io.load_basis(tmp_path / "b.pod")
    assert np.array_equal(back.phi, b.phi) and np.array_equal(back.singular_values, b.singular_values)
    with pytest.raises(FormatError):
        io.load_array(tmp_path / "b.pod", "trajectory")


def test_model_round_trip(tmp_path):
    p = init_params(build_mask_1d(12, 4, 2), 3, 10, "sigmoid", seed=3, meta={"b": 4})
    io.save_model(tmp_path / "m.ae", p)
    q, _ = io.load_model(tmp_path / "m.ae")
    for name, a in p.tensors().items():
        assert np.array_equal(a, q.tensors()[name]), name
    assert np.array_equal(p.mask_indices, q.mask_indices) and q.activation == "sigmoid"
    assert q.meta == {"b": 4}
    io.save_model(tmp_path / "m2.ae", q)
    assert io.file_hash(tmp_path / "m.ae") == io.file_hash(tmp_path / "m2.ae")


@pytest.mark.parametrize("corrupt", ["dims", "schema", "header", "truncate"])
def test_corrupt_files_rejected(tmp_path, rng, corrupt):
    path = tmp_path / "a.arr"
    io.save_array(path, rng.standard_normal((4, 4)), "basis")
    head, body = path.read_bytes().split(b"\n", 1)
    if corrupt == "dims":
        head = head.replace(b"[4, 4]", b"[4, 5]")
    elif corrupt == "schema":
        head = head.replace(b'"schema_version": 1', b'"schema_version": 99')
    elif corrupt == "header":
        head = b"{not json"
    else:
        body = body[:-8]
    path.write_bytes(head + b"\n" + body)
    with pytest.raises(FormatError):
        io.load_array(path)


def test_results_table(tmp_path):
    row = {"config_id": "x", "kind": "nm-lspg", "mu": 1.0, "f": 5, "max_rel_error": 0.0123, "status": "ok"}
    io.write_results(tmp_path / "r.csv", [row])
    (back,) = io.read_results(tmp_path / "r.csv")
    assert float(back["max_rel_error"]) == 0.0123 and back["n_r"] == ""
    io.write_results(tmp_path / "e.csv", [])
    assert io.read_results(tmp_path / "e.csv") == []
    with pytest.raises(FormatError):
        io.write_results(tmp_path / "bad.csv", [{**row, "extra": 1}])


# --- config ----------------------------------------------------------------


def test_defaults():
    c1, c2 = default_config("burgers1d"), default_config("burgers2d")
    assert (c1.problem.nx, c1.problem.nt, c1.autoencoder.b, c1.autoencoder.delta_b) == (1001, 500, 36, 12)
    assert c1.problem.train_mu == (0.9, 1.1) and c1.rom.n_r == 31 and c1.rom.n_z == 47
    assert (c2.problem.nx, c2.problem.nt) == (40, 500)
    big = c2.paper_scale()
    assert (big.problem.nx, big.problem.ny, big.problem.nt, big.autoencoder.hidden_dim) == (60, 60, 1500, 6728)
    assert c1.paper_scale() == c1
    with pytest.raises(ConfigError):
        default_config("heat")


def test_parse_and_round_trip():
    text = """
[problem]
name = burgers1d
nx = 201
train_mu = 0.8:1.2:0.1
[sweep]
nr_nz = 10x20, 15x30
kinds = nm-lspg ls-lspg
[run]
seed = 7
"""
    cfg = parse_config(text)
    assert cfg.problem.nx == 201 and cfg.problem.train_mu == (0.8, 0.9, 1.0, 1.1, 1.2)
    assert cfg.sweep.nr_nz == ((10, 20), (15, 30)) and cfg.sweep.kinds == ("nm-lspg", "ls-lspg")
    assert parse_config(dump_config(cfg)) == cfg
    assert cfg.key() == parse_config(dump_config(cfg)).key()
    assert cfg.with_seed(8).key() != cfg.key()
    assert cfg.with_seed(8).key("problem") == cfg.key("problem")


@pytest.mark.parametrize("text", [
    "[problem]\nnxx = 3\n",
    "[extra]\na = 1\n",
    "[problem]\nnx = ten\n",
    "[rom]\nkind = nm-foo\n",
    "[rom]\nn_r = 50\nn_z = 40\n",
    "[problem]\nintegrator = euler\n",
    "[problem]\ntrain_mu =\n",
    "[problem]\nnx = 1\nnx = 2\n",
    "[autoencoder]\nb = 0\n",
    "not an ini file",
])
def test_strict_rejection(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["burgers1d", "burgers2d"]),
       st.lists(st.floats(0.5, 2.0, allow_nan=False), min_size=1, max_size=4))
def test_dump_parse_round_trip_property(seed, name, mus):
    from dataclasses import replace
    cfg = default_config(name).with_seed(seed)
    cfg = replace(cfg, problem=replace(cfg.problem, train_mu=tuple(mus)))
    assert parse_config(dump_config(cfg)) == cfg
