"""Experiment orchestration.

A :class:`Workspace` owns an output directory. Every expensive artifact (FOM
trajectories, trained autoencoders, POD bases) is written there under a name
that embeds a hash of the configuration it depends on, and is reloaded from
disk when present. Stages therefore hand off through files only, and repeated
runs (including the acceptance suite) reuse earlier work.
"""

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .autoencoder import (
    TrainingConfig,
    build_mask_1d,
    build_mask_2d,
    extract_scaled_maps,
    nonlinear_projection_error,
    train_autoencoder,
)
from .error_analysis import (
    FLOP_KINDS,
    CostModelInput,
    check_error_bound,
    estimate_lipschitz,
    flop_estimate,
    max_relative_error,
)
from .exceptions import NmromError
from .hyper import (
    HrSetup,
    build_gappy_operator,
    greedy_select_indices,
    residual_basis_from_solution_snapshots,
    run_hr_rom,
)
from .models import make_model
from .pod import assemble_snapshots, compute_pod_basis, linear_projection_error
from .rom import LinearRepresentation, ManifoldRepresentation, RomProblem, block_linear, run_rom
from .timestep import TimeGrid, run_fom

log = logging.getLogger("nmrom")


def n_workers():
    try:
        return max(1, int(os.environ.get("NMROM_WORKERS", "1")))
    except ValueError:
        return 1


def _mu_tag(mu):
    return f"{mu:.6f}".rstrip("0").rstrip(".")


class Workspace:
    def __init__(self, cfg, out=None):
        self.cfg = cfg
        self.dir = Path(out or cfg.run.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._fom = {}
        self._params = None
        self._bases = {}
        self._phi_r = {}

    # --- problem ---------------------------------------------------------

    def model(self, mu):
        p = self.cfg.problem
        return make_model(p.name, mu, p.nx, p.ny or p.nx, p.reynolds)

    def grid(self):
        return TimeGrid.from_final_time(self.cfg.problem.T, self.cfg.problem.nt)

    def components(self, mu=1.0):
        return self.model(mu).components

    def _problem_key(self):
        p = asdict(self.cfg.problem)
        p.pop("train_mu")
        p.pop("test_mu")
        return io_key(p)

    # --- FOM -------------------------------------------------------------

    def fom_path(self, mu):
        return self.dir / "fom" / f"mu{_mu_tag(mu)}-{self._problem_key()}.traj"

    def fom(self, mu):
        mu = float(mu)
        if mu not in self._fom:
            path = self.fom_path(mu)
            if path.exists():
                tr, _ = io.load_trajectory(path)
            else:
                log.info("running FOM mu=%s", mu)
                tr = run_fom(self.model(mu), self.cfg.problem.integrator, self.grid())
                io.save_trajectory(path, tr, problem_key=self._problem_key())
            self._fom[mu] = tr
        return self._fom[mu]

    def fom_wall_time(self, mu):
        """Fresh FOM solve time in this process (files may come from elsewhere)."""
        return run_fom(self.model(mu), self.cfg.problem.integrator, self.grid()).wall_time

    def train_trajectories(self):
        return [self.fom(mu) for mu in self.cfg.problem.train_mu]

    def u_ref_linear(self, mu):
        m = self.model(mu)
        return m.initial_state() if self.cfg.rom.u_ref == "initial" else np.zeros(m.dim)

    # --- autoencoders ----------------------------------------------------

    def _train_key(self):
        return io_key({"problem": self._problem_key(), "train_mu": list(self.cfg.problem.train_mu),
                       "ae": asdict(self.cfg.autoencoder), "seed": self.cfg.run.seed})

    def model_paths(self):
        comps = self.components()
        tag = self._train_key()
        if len(comps) == 1:
            return [self.dir / "models" / f"ae-{tag}.ae"]
        return [self.dir / "models" / f"ae-{name}-{tag}.ae" for name in ("u", "v")[: len(comps)]]

    def mask(self):
        a, p = self.cfg.autoencoder, self.cfg.problem
        if p.name == "burgers1d":
            return build_mask_1d(self.model(1.0).dim, a.b, a.delta_b)
        return build_mask_2d(p.nx - 2, (p.ny or p.nx) - 2, a.b, a.delta_b)

    def train(self, progress=None):
        """Trained parameters per component (loaded when already on disk)."""
        if self._params is not None:
            return self._params
        paths = self.model_paths()
        if all(p.exists() for p in paths):
            self._params = [io.load_model(p)[0] for p in paths]
            return self._params
        a = self.cfg.autoencoder
        tcfg = TrainingConfig(
            batch_size=a.batch_size, max_epochs=a.max_epochs, lr=a.lr, lr_decay=a.lr_decay,
            lr_patience=a.lr_patience, stop_patience=a.stop_patience, seed=self.cfg.run.seed,
            val_fraction=a.val_fraction, stagnation_tol=a.stagnation_tol, overfit_ratio=a.overfit_ratio,
        )
        S = assemble_snapshots(self.train_trajectories())
        mask = self.mask()
        params = []
        for comp, path in zip(self.components(), paths):
            if path.exists():
                params.append(io.load_model(path)[0])
                continue
            t0 = time.perf_counter()
            res = train_autoencoder(
                S.data[comp], mask, tcfg, a.latent_dim, a.hidden_dim, a.activation, a.target,
                meta={"b": a.b, "delta_b": a.delta_b, "problem": self.cfg.problem.name}, log=progress,
            )
            io.save_model(path, res.params)
            summary = {
                "epochs": res.epochs, "best_epoch": res.best_epoch,
                "best_val_loss": res.val_loss[res.best_epoch],
                "train_loss_at_best": res.train_loss[res.best_epoch],
                "overfit_ratio": res.overfit_ratio, "overfit": res.overfit(a.overfit_ratio),
                "seconds": time.perf_counter() - t0,
                "train_loss": res.train_loss, "val_loss": res.val_loss,
            }
            path.with_suffix(".json").write_text(json.dumps(summary))
            params.append(res.params)
        self._params = params
        return params

    # --- bases -----------------------------------------------------------

    def pod_bases(self, n_s, u_ref):
        """One POD basis of width ``n_s`` per component."""
        key = (n_s, u_ref.tobytes())
        if key not in self._bases:
            S = assemble_snapshots(self.train_trajectories(), u_ref)
            self._bases[key] = [compute_pod_basis(S.data[c], n_s) for c in self.components()]
        return self._bases[key]

    def residual_basis(self, n_r):
        if n_r not in self._phi_r:
            S = assemble_snapshots(self.train_trajectories())
            self._phi_r[n_r] = residual_basis_from_solution_snapshots(S, n_r)
        return self._phi_r[n_r]

    def hr_operator(self, n_r, n_z):
        phi_r = self.residual_basis(n_r)
        return build_gappy_operator(phi_r, greedy_select_indices(phi_r, n_z))

    # --- ROMs ------------------------------------------------------------

    def representation(self, kind, mu):
        if kind.startswith("nm-"):
            return ManifoldRepresentation.from_scaled_maps(extract_scaled_maps(p) for p in self.train())
        u_ref = self.u_ref_linear(mu)
        bases = self.pod_bases(self.cfg.autoencoder.latent_dim, u_ref)
        if len(bases) == 1:
            return LinearRepresentation(bases[0].phi, u_ref)
        return block_linear([b.phi for b in bases], u_ref)

    def rom_problem(self, kind, mu):
        proj = "lspg" if "lspg" in kind else "galerkin"
        return RomProblem(self.model(mu), self.cfg.problem.integrator, self.grid(), self.representation(kind, mu), proj)

    def run_rom(self, kind, mu, n_r=None, n_z=None):
        problem = self.rom_problem(kind, mu)
        if kind.endswith("-hr"):
            n_r = n_r or self.cfg.rom.n_r
            n_z = n_z or self.cfg.rom.n_z
            return run_hr_rom(HrSetup(problem, self.hr_operator(n_r, n_z)), kind=kind)
        return run_rom(problem, kind=kind)

    def cell(self, kind, mu, n_r=None, n_z=None, fom_time=None):
        """One result row; solver failures become rows with error 1 and a status."""
        hr = kind.endswith("-hr")
        row = {
            "config_id": self.cfg.key(), "kind": kind, "mu": float(mu),
            "f": self.cfg.autoencoder.latent_dim,
            "n_r": (n_r or self.cfg.rom.n_r) if hr else "", "n_z": (n_z or self.cfg.rom.n_z) if hr else "",
            "u_ref": "normalization" if kind.startswith("nm-") else self.cfg.rom.u_ref,
        }
        fom = self.fom(mu)
        ft = fom.wall_time if fom_time is None else fom_time
        try:
            traj = self.run_rom(kind, mu, n_r, n_z)
            err = max_relative_error(traj, fom).max
            if not math.isfinite(err):
                raise NmromError("non-finite ROM state")
            row.update(max_rel_error=err, fom_time=ft, rom_time=traj.wall_time,
                       speedup=ft / traj.wall_time if traj.wall_time > 0 else float("inf"), status="ok")
        except (NmromError, ArithmeticError) as exc:
            row.update(max_rel_error=1.0, fom_time=ft, rom_time="", speedup="", status=f"failed: {exc}")
        return row

    def projection_errors(self, mu):
        fom = self.fom(mu)
        out = {}
        u_ref = self.u_ref_linear(mu)
        rep = self.representation("ls-lspg", mu)
        out["linear"] = linear_projection_error(fom, rep.phi, u_ref)
        maps = [extract_scaled_maps(p) for p in self.train()]
        num = 0.0
        for mp, c in zip(maps, self.components()):
            num += nonlinear_projection_error(fom.states[:, c], mp.h, mp.g, mp.u_ref) ** 2 * np.sum(fom.states[:, c] ** 2)
        out["nonlinear"] = float(np.sqrt(num / np.sum(fom.states**2)))
        return out


def io_key(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


def run_sweep(ws, kinds=None, mus=None, nr_nz=None):
    """Result rows over test parameters and/or (n_r, n_z) pairs.

    Cells are independent and run on a thread pool sized by ``NMROM_WORKERS``;
    rows come back in a fixed order regardless of completion order.
    """
    cfg = ws.cfg
    kinds = tuple(kinds or cfg.sweep.kinds or (cfg.rom.kind,))
    mus = tuple(cfg.sweep.test_mu if mus is None else mus)
    nr_nz = tuple(cfg.sweep.nr_nz if nr_nz is None else nr_nz)
    cells = []
    for kind in kinds:
        grid = nr_nz if (kind.endswith("-hr") and nr_nz) else ((None, None),)
        for mu in mus:
            for n_r, n_z in grid:
                cells.append((kind, mu, n_r, n_z))
    if not cells:
        return []
    if any(k.startswith("nm-") for k in kinds):
        ws.train()  # train once, before cells fan out
    for mu in mus:
        ws.fom(mu)
    workers = n_workers()
    if workers == 1:
        return [ws.cell(*c) for c in cells]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda c: ws.cell(*c), cells))


def bound_report(ws, kind="nm-lspg-hr", mu=None, steps=None):
    """Error-bound check for a hyper-reduced NM run on the first ``steps`` steps."""
    mu = cfg_mu(ws, mu)
    if steps is not None and steps < ws.cfg.problem.nt:
        p = ws.cfg.problem
        cfg = replace(ws.cfg, problem=replace(p, nt=steps, T=p.T * steps / p.nt))
        sub = Workspace(cfg, ws.dir)
        sub._params = ws.train() if kind.startswith("nm-") else None
        ws = sub
    fom = ws.fom(mu)
    setup_problem = ws.rom_problem(kind, mu)
    op = ws.hr_operator(ws.cfg.rom.n_r, ws.cfg.rom.n_z)
    traj = run_hr_rom(HrSetup(setup_problem, op), kind=kind)
    model = ws.model(mu)
    L = estimate_lipschitz(model, list(fom.states), pairs=list(zip(fom.states, traj.states)))
    return check_error_bound(kind, model, fom.states, traj.states, op, ws.cfg.problem.integrator, ws.grid().dt, L)


def cfg_mu(ws, mu):
    if mu is not None:
        return float(mu)
    if not ws.cfg.problem.test_mu:
        raise NmromError("no test parameter configured")
    return float(ws.cfg.problem.test_mu[0])


def cost_curves(m_values, f, z, b, delta_b):
    rows = []
    for m in m_values:
        c = CostModelInput(m=m, f=f, z=min(z, m), b=b, delta_b=delta_b)
        rows.append({"m": m, **{k: flop_estimate(k, c) for k in FLOP_KINDS}})
    return rows
