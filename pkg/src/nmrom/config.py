"""Experiment configuration: sectioned key-value files, parsed strictly."""

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .exceptions import ConfigError


def _floats(text):
    text = text.strip()
    if not text:
        return ()
    if ":" in text:
        # start:stop:step, inclusive of stop
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = parts
        n = int(round((stop - start) / step))
        return tuple(round(start + i * step, 12) for i in range(n + 1))
    return tuple(float(p) for p in text.replace(",", " ").split())


def _pairs(text):
    out = []
    for tok in text.replace(",", " ").split():
        a, b = tok.lower().split("x")
        out.append((int(a), int(b)))
    return tuple(out)


@dataclass(frozen=True)
class ProblemConfig:
    name: str = "burgers1d"
    nx: int = 1001
    ny: int = 0
    T: float = 0.5
    nt: int = 500
    integrator: str = "be"
    reynolds: float = 10000.0
    train_mu: tuple = (0.9, 1.1)
    test_mu: tuple = (1.0,)


@dataclass(frozen=True)
class AutoencoderConfig:
    latent_dim: int = 5
    hidden_dim: int = 2000
    b: int = 36
    delta_b: int = 12
    activation: str = "swish"
    target: str = "[0,1]"
    batch_size: int = 20
    max_epochs: int = 10000
    lr: float = 1e-3
    lr_decay: float = 10.0
    lr_patience: int = 10
    stop_patience: int = 200
    val_fraction: float = 0.1
    stagnation_tol: float = 1e-6
    overfit_ratio: float = 3.0


@dataclass(frozen=True)
class RomConfig:
    kind: str = "nm-lspg"
    u_ref: str = "zero"  # linear ROMs: "zero" or "initial"
    n_r: int = 31
    n_z: int = 47


@dataclass(frozen=True)
class SweepConfig:
    test_mu: tuple = ()
    nr_nz: tuple = ()
    kinds: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    rom: RomConfig = field(default_factory=RomConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def key(self, *sections):
        """Short stable hash of the named sections (all if none given)."""
        d = asdict(self)
        if sections:
            d = {s: d[s] for s in sections}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_seed(self, seed):
        return replace(self, run=replace(self.run, seed=int(seed)))

    def paper_scale(self):
        """Restore the full 2D sizes (the 1D defaults already match)."""
        if self.problem.name != "burgers2d":
            return self
        return replace(self, problem=replace(self.problem, nx=60, ny=60, nt=1500),
                       autoencoder=replace(self.autoencoder, hidden_dim=6728, b=100, delta_b=10))


SECTIONS = {
    "problem": ProblemConfig,
    "autoencoder": AutoencoderConfig,
    "rom": RomConfig,
    "sweep": SweepConfig,
    "run": RunConfig,
}

_PARSERS = {"train_mu": _floats, "test_mu": _floats, "nr_nz": _pairs}

ROM_KINDS = (
    "ls-galerkin", "ls-lspg", "nm-galerkin", "nm-lspg",
    "ls-galerkin-hr", "ls-lspg-hr", "nm-galerkin-hr", "nm-lspg-hr",
)


def _convert(cls, key, raw):
    ftype = {f.name: f.type for f in fields(cls)}[key]
    if key in _PARSERS:
        return _PARSERS[key](raw)
    if key == "kinds":
        return tuple(raw.replace(",", " ").split())
    if ftype in (int, "int"):
        return int(raw)
    if ftype in (float, "float"):
        return float(raw)
    return raw.strip()


def default_config(problem="burgers1d"):
    if problem == "burgers1d":
        return ExperimentConfig()
    if problem == "burgers2d":
        return ExperimentConfig(
            problem=ProblemConfig(name="burgers2d", nx=40, ny=40, T=2.0, nt=500, train_mu=(0.9, 0.95, 1.05, 1.1)),
            autoencoder=AutoencoderConfig(hidden_dim=2888, b=100, delta_b=10, batch_size=240),
            rom=RomConfig(n_r=55, n_z=58),
        )
    raise ConfigError(f"unknown problem {problem!r}")


def parse_config(text, source="<config>"):
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {unknown}")
    name = cp.get("problem", "name", fallback="burgers1d").strip()
    cfg = default_config(name)
    for section, cls in SECTIONS.items():
        if not cp.has_section(section):
            continue
        allowed = {f.name for f in fields(cls)}
        updates = {}
        for key, raw in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                updates[key] = _convert(cls, key, raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {exc}") from exc
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **updates)})
    validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def validate(cfg):
    p, a, r = cfg.problem, cfg.autoencoder, cfg.rom
    if p.name not in ("burgers1d", "burgers2d"):
        raise ConfigError(f"unknown problem {p.name!r}")
    if p.name == "burgers2d" and p.ny < 4:
        raise ConfigError("burgers2d needs ny >= 4")
    if p.nt < 0 or p.T <= 0:
        raise ConfigError("need nt >= 0 and T > 0")
    if p.integrator not in ("be", "am2", "bdf2", "rk2"):
        raise ConfigError(f"unknown integrator {p.integrator!r}")
    if not p.train_mu:
        raise ConfigError("train_mu must not be empty")
    if r.kind not in ROM_KINDS:
        raise ConfigError(f"unknown ROM kind {r.kind!r}")
    for k in cfg.sweep.kinds:
        if k not in ROM_KINDS:
            raise ConfigError(f"unknown ROM kind {k!r} in sweep")
    if r.u_ref not in ("zero", "initial"):
        raise ConfigError("rom.u_ref must be 'zero' or 'initial'")
    if a.activation not in ("swish", "sigmoid"):
        raise ConfigError(f"unknown activation {a.activation!r}")
    if a.target not in ("[-1,1]", "[0,1]"):
        raise ConfigError(f"unknown target range {a.target!r}")
    for name in ("latent_dim", "hidden_dim", "b", "delta_b", "batch_size", "max_epochs"):
        if getattr(a, name) < 1:
            raise ConfigError(f"autoencoder.{name} must be >= 1")
    if r.n_z < r.n_r:
        raise ConfigError("rom.n_z must be >= rom.n_r")
    return cfg


def dump_config(cfg):
    """Render as config-file text (round-trips through :func:`parse_config`)."""
    out = []
    for section in SECTIONS:
        out.append(f"[{section}]")
        for k, v in asdict(getattr(cfg, section)).items():
            if k == "nr_nz":
                v = ", ".join(f"{a}x{b}" for a, b in v)
            elif isinstance(v, (tuple, list)):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            out.append(f"{k} = {v}")
        out.append("")
    return "\n".join(out)
