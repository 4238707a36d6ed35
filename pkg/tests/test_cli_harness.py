"""End-to-end runs of the command line and the workspace on a tiny 1D setup."""

import csv
import io as _io
from contextlib import redirect_stdout

import numpy as np
import pytest

from nmrom import io
from nmrom.cli import main
from nmrom.config import parse_config
from nmrom.harness import Workspace, cost_curves, run_sweep

TINY = """
[problem]
name = burgers1d
nx = 41
T = 0.2
nt = 20
train_mu = 0.9, 1.1
test_mu = 1.0
[autoencoder]
latent_dim = 3
hidden_dim = 40
b = 6
delta_b = 3
batch_size = 6
max_epochs = 15
[rom]
n_r = 6
n_z = 10
[run]
out = {out}
seed = 3
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.format(out=tmp_path / "runs"))
    return path


def run(*argv):
    buf = _io.StringIO()
    with redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


def test_cost_command_to_stdout():
    code, out = run("cost", "--sweep-m", "1e3:1e5", "--points", "5")
    assert code == 0
    rows = list(csv.DictReader(_io.StringIO(out)))
    assert [int(r["m"]) for r in rows] == [1000, 3162, 10000, 31623, 100000]
    assert all(float(r["nm-lspg-hr"]) < float(r["nm-lspg"]) for r in rows)


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[problem]\nbogus = 1\n")
    assert main(["fom", "--config", str(bad)]) == 2
    assert main(["fom", "--config", str(tmp_path / "missing.ini")]) == 2
    assert "config error" in capsys.readouterr().err


def test_pipeline_through_files(tiny, tmp_path):
    code, out = run("fom", "--config", tiny)
    assert code == 0 and out.count(".traj") == 3
    code, out = run("train", "--config", tiny)
    assert code == 0
    cfg = parse_config(tiny.read_text())
    ws = Workspace(cfg)
    (model_path,) = ws.model_paths()
    h1 = io.file_hash(model_path)
    assert h1 in out
    code, out = run("rom", "--config", tiny, "--kind", "nm-lspg")
    assert code == 0 and "max relative error" in out
    code, out = run("rom", "--config", tiny, "--kind", "ls-lspg-hr")
    assert code == 0
    code, out = run("pod", "--config", tiny)
    assert code == 0 and ".pod" in out
    # retraining from scratch in a fresh directory reproduces the file bit for bit
    code, _ = run("train", "--config", tiny, "--out", tmp_path / "again")
    assert code == 0
    assert io.file_hash(tmp_path / "again" / "models" / model_path.name) == h1
    code, out = run("sweep", "--config", tiny, "--kinds", "nm-lspg-hr,ls-lspg", "--nr-nz", "4x8,6x10")
    assert code == 0
    table = list(io.read_results(next((tmp_path / "runs" / "results").glob("sweep-*.csv"))))
    assert [(r["kind"], r["n_r"]) for r in table] == [("nm-lspg-hr", "4"), ("nm-lspg-hr", "6"), ("ls-lspg", "")]
    code, out = run("sweep", "--config", tiny, "--kinds", "nm-foo")
    assert code == 2


def test_rom_failure_exit_1(tiny, monkeypatch):
    import nmrom.harness as harness

    def boom(*a, **k):
        raise ArithmeticError("diverged")

    monkeypatch.setattr(harness, "run_rom", boom)
    code, _ = run("rom", "--config", tiny, "--kind", "ls-lspg")
    assert code == 1


def test_workspace_reuses_files(tiny):
    cfg = parse_config(tiny.read_text())
    ws = Workspace(cfg)
    a = ws.fom(1.0)
    b = Workspace(cfg).fom(1.0)
    assert np.array_equal(a.states, b.states)
    row = ws.cell("ls-lspg", 1.0)
    assert row["status"] == "ok" and 0 <= row["max_rel_error"] < 1


def test_empty_sweep(tiny):
    ws = Workspace(parse_config(tiny.read_text()))
    assert run_sweep(ws, ["ls-lspg"], mus=()) == []


def test_cost_curves_clip_z():
    rows = cost_curves([50, 500], 5, 100, 36, 12)
    assert rows[0]["ls-lspg-hr"] == 25 * 50 + 5 * 50**2
