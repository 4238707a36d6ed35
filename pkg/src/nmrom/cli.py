"""Command-line entry point: ``nmrom <command> --config FILE [--seed N] [--out DIR]``.

Exit status: 0 on success, 1 on a solver/model error, 2 on a configuration error.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ROM_KINDS, _floats, _pairs, default_config, dump_config, load_config
from .exceptions import ConfigError, NmromError
from .harness import Workspace, bound_report, cost_curves, run_sweep


def _common(p):
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--problem", choices=("burgers1d", "burgers2d"), help="use built-in defaults for a problem")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", help="output directory (default: run.out from the config)")
    p.add_argument("--paper-scale", action="store_true", help="full 2D sizes (nx = ny = 60, nt = 1500)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="nmrom", description="Linear and nonlinear-manifold ROMs for Burgers problems")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fom", help="run the full-order model, one trajectory file per parameter")
    _common(p)
    p.add_argument("--mu", help="parameters (list or start:stop:step); default train and test sets")

    p = sub.add_parser("train", help="train the autoencoder(s) and write model files")
    _common(p)

    p = sub.add_parser("pod", help="write POD bases (one per component)")
    _common(p)

    p = sub.add_parser("rom", help="run one ROM variant")
    _common(p)
    p.add_argument("--kind", choices=ROM_KINDS)
    p.add_argument("--mu", type=float)
    p.add_argument("--nr", type=int)
    p.add_argument("--nz", type=int)

    p = sub.add_parser("sweep", help="parameter and/or (n_r, n_z) sweeps to CSV")
    _common(p)
    p.add_argument("--kinds", help="comma separated ROM kinds")
    p.add_argument("--mu", help="test parameters (list or start:stop:step)")
    p.add_argument("--nr-nz", help="pairs like 31x47,40x60")

    p = sub.add_parser("bound", help="a-posteriori error-bound check for an HR NM run")
    _common(p)
    p.add_argument("--kind", choices=("nm-lspg-hr", "nm-galerkin-hr"), default="nm-lspg-hr")
    p.add_argument("--mu", type=float)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("cost", help="flop-model curves to CSV")
    p.add_argument("--sweep-m", default="1e3:1e6", help="mmin:mmax (log-spaced)")
    p.add_argument("--points", type=int, default=31)
    p.add_argument("--f", type=int, default=5)
    p.add_argument("--z", type=int, default=100)
    p.add_argument("--b", type=int, default=36)
    p.add_argument("--delta-b", type=int, default=12)
    p.add_argument("--out", default="-", help="CSV path or - for stdout")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _load(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_config(args.problem or "burgers1d")
    if args.paper_scale:
        cfg = cfg.paper_scale()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = replace(cfg, run=replace(cfg.run, out=args.out))
    return cfg


def _write_csv(path, rows, columns):
    fh = sys.stdout if path == "-" else open(path, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_fom(args, cfg):
    ws = Workspace(cfg)
    mus = _floats(args.mu) if args.mu else tuple(dict.fromkeys(cfg.problem.train_mu + cfg.problem.test_mu))
    for mu in mus:
        tr = ws.fom(mu)
        print(f"mu={mu}: {ws.fom_path(mu)} ({tr.nt} steps, {tr.wall_time:.3f} s)")
    (ws.dir / "config.ini").write_text(dump_config(cfg))


def cmd_train(args, cfg):
    ws = Workspace(cfg)

    def progress(epoch, tr, va, lr):
        if epoch % 50 == 0:
            logging.getLogger("nmrom").info("epoch %d train %.3e val %.3e lr %.1e", epoch, tr, va, lr)

    ws.train(progress)
    for path in ws.model_paths():
        summary = path.with_suffix(".json")
        info = json.loads(summary.read_text()) if summary.exists() else {}
        print(f"{path} sha256={io.file_hash(path)} epochs={info.get('epochs', '?')} "
              f"best_val={info.get('best_val_loss', float('nan')):.3e} overfit={info.get('overfit', '?')}")


def cmd_pod(args, cfg):
    ws = Workspace(cfg)
    mu = cfg.problem.test_mu[0] if cfg.problem.test_mu else 1.0
    bases = ws.pod_bases(cfg.autoencoder.latent_dim, ws.u_ref_linear(mu))
    names = ("",) if len(bases) == 1 else ("-u", "-v")
    for basis, name in zip(bases, names):
        path = ws.dir / "bases" / f"pod{name}-f{basis.n_s}-{cfg.key('problem', 'rom')}.pod"
        io.save_basis(path, basis, u_ref=cfg.rom.u_ref)
        print(path)


def cmd_rom(args, cfg):
    ws = Workspace(cfg)
    kind = args.kind or cfg.rom.kind
    mu = args.mu if args.mu is not None else cfg.problem.test_mu[0]
    row = ws.cell(kind, mu, args.nr, args.nz)
    path = ws.dir / "results" / f"rom-{kind}-mu{mu:g}-{cfg.key()}.csv"
    io.write_results(path, [row])
    print(f"{kind} mu={mu}: max relative error {row['max_rel_error']:.6e} ({row['status']})")
    print(path)
    if row["status"] != "ok":
        raise NmromError(row["status"])


def cmd_sweep(args, cfg):
    ws = Workspace(cfg)
    kinds = args.kinds.split(",") if args.kinds else None
    for k in kinds or ():
        if k not in ROM_KINDS:
            raise ConfigError(f"unknown ROM kind {k!r}")
    mus = _floats(args.mu) if args.mu else (cfg.sweep.test_mu or cfg.problem.test_mu)
    pairs = _pairs(args.nr_nz) if args.nr_nz else None
    rows = run_sweep(ws, kinds, mus, pairs)
    path = ws.dir / "results" / f"sweep-{cfg.key()}.csv"
    io.write_results(path, rows)
    for r in rows:
        print(f"{r['kind']:>15} mu={r['mu']:<6g} nr={r['n_r']!s:>3} nz={r['n_z']!s:>3} err={r['max_rel_error']:.4e} {r['status']}")
    print(path)


def cmd_bound(args, cfg):
    ws = Workspace(cfg)
    rep = bound_report(ws, args.kind, args.mu, args.steps)
    path = ws.dir / "results" / f"bound-{args.kind}-{cfg.key()}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(str(path), [
        {"n": s.n, "lhs": s.lhs, "rhs": s.rhs, "gamma1": s.gamma1, "gamma2": s.gamma2,
         "admissible": int(s.admissible), "holds": int(s.holds)} for s in rep.steps
    ], ["n", "lhs", "rhs", "gamma1", "gamma2", "admissible", "holds"])
    print(f"# {rep.note}")
    print(f"L={rep.L:.6e} ||P||={rep.p_norm:.6e} admissible={rep.n_admissible}/{len(rep.steps)} "
          f"violations={len(rep.violations)}")
    print(path)
    if not rep.ok:
        raise NmromError(f"bound violated at steps {[s.n for s in rep.violations]}")


def cmd_cost(args):
    lo, hi = (float(x) for x in args.sweep_m.split(":"))
    ms = np.unique(np.round(np.logspace(np.log10(lo), np.log10(hi), args.points)).astype(int))
    rows = cost_curves([int(m) for m in ms], args.f, args.z, args.b, args.delta_b)
    _write_csv(args.out, rows, ["m", "nm-lspg", "nm-lspg-hr", "ls-lspg", "ls-lspg-hr"])


COMMANDS = {"fom": cmd_fom, "train": cmd_train, "pod": cmd_pod, "rom": cmd_rom, "sweep": cmd_sweep, "bound": cmd_bound}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "cost":
            cmd_cost(args)
            return 0
        cfg = _load(args)
        Path(cfg.run.out).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"nmrom: config error: {exc}", file=sys.stderr)
        return 2
    except (NmromError, ArithmeticError, ValueError, OSError) as exc:
        print(f"nmrom: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
