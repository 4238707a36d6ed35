"""File formats.

Array files (trajectories, bases): one JSON header line, then a little-endian
float64 payload in column-major order. Model files: one JSON header line
listing the tensors, then their little-endian blobs back to back. Result
tables: CSV with the fixed column order :data:`RESULT_COLUMNS`.
"""

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderParams
from .exceptions import FormatError
from .pod import NormalizationStats, PodBasis
from .timestep import Trajectory

SCHEMA_VERSION = 1


def _write(path, header, blobs):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def _read(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a JSON object")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: schema version {header.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    return header, payload


def save_array(path, A, kind, **meta):
    """Write a 2D array column-major with a header recording its dims."""
    A = np.asarray(A, dtype="<f8")
    if A.ndim != 2:
        raise FormatError("only 2D arrays are stored")
    header = {"schema_version": SCHEMA_VERSION, "kind": kind, "dims": list(A.shape), "ordering": "column-major", **meta}
    _write(path, header, [np.asfortranarray(A).tobytes(order="F")])


def load_array(path, kind=None):
    header, payload = _read(path)
    if kind is not None and header.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} file, got {header.get('kind')!r}")
    dims = header.get("dims")
    if not (isinstance(dims, list) and len(dims) == 2 and all(isinstance(d, int) and d >= 0 for d in dims)):
        raise FormatError(f"{path}: bad dims {dims!r}")
    if len(payload) != 8 * dims[0] * dims[1]:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, dims {dims} need {8 * dims[0] * dims[1]}")
    A = np.frombuffer(payload, dtype="<f8").reshape(dims, order="F").astype(np.float64)
    return A, header


def save_trajectory(path, traj, **meta):
    """Columns are states ``u^0 .. u^nt``."""
    save_array(path, traj.states.T, "trajectory", dt=traj.dt, parameter=traj.mu,
               integrator=traj.integrator, wall_time=traj.wall_time, **meta)


def load_trajectory(path):
    A, h = load_array(path, "trajectory")
    tr = Trajectory(np.ascontiguousarray(A.T), h["parameter"], h["dt"], h.get("integrator", "be"),
                    wall_time=h.get("wall_time", 0.0))
    return tr, h


def save_basis(path, basis, **meta):
    save_array(path, basis.phi, "basis", dt=None, parameter=None,
               singular_values=[float(s) for s in basis.singular_values], **meta)


def load_basis(path):
    A, h = load_array(path, "basis")
    return PodBasis(A, np.asarray(h.get("singular_values", []), dtype=np.float64)), h


# --- autoencoder model files ---------------------------------------------

_MODEL_TENSORS = ("We1", "be1", "We2", "be2", "W1", "b1", "W2")


def save_model(path, params, **meta):
    blobs, entries, offset = [], [], 0
    tensors = dict(params.tensors())
    tensors["u_scale"] = params.norm.u_scale
    tensors["u_ref"] = params.norm.u_ref
    tensors["mask_indices"] = params.mask_indices
    tensors["mask_indptr"] = params.mask_indptr
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "autoencoder",
        "activation": params.activation,
        "hidden_width": params.hidden_width,
        "target": params.norm.target,
        "tensors": entries,
        "meta": params.meta,
        **meta,
    }
    _write(path, header, blobs)


def load_model(path):
    header, payload = _read(path)
    if header.get("kind") != "autoencoder":
        raise FormatError(f"{path}: not an autoencoder model file")
    arrays = {}
    try:
        for e in header["tensors"]:
            end = e["offset"] + e["nbytes"]
            if end > len(payload):
                raise FormatError(f"{path}: tensor {e['name']} runs past the payload")
            a = np.frombuffer(payload[e["offset"]:end], dtype=e["dtype"])
            if a.size != math.prod(e["shape"]):
                raise FormatError(f"{path}: tensor {e['name']} size disagrees with its shape")
            arrays[e["name"]] = a.reshape(e["shape"]).astype(np.int64 if e["dtype"] == "<i8" else np.float64)
        norm = NormalizationStats(arrays.pop("u_scale"), arrays.pop("u_ref"), header["target"])
        params = AutoencoderParams(
            **{k: arrays[k] for k in _MODEL_TENSORS},
            mask_indices=arrays["mask_indices"],
            mask_indptr=arrays["mask_indptr"],
            hidden_width=int(header["hidden_width"]),
            activation=header["activation"],
            norm=norm,
            meta=header.get("meta", {}),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from exc
    return params, header


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- result tables -------------------------------------------------------

RESULT_COLUMNS = (
    "config_id", "kind", "mu", "f", "n_r", "n_z", "u_ref",
    "max_rel_error", "fom_time", "rom_time", "speedup", "status",
)


def write_results(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="raise")
        w.writeheader()
        for row in rows:
            extra = set(row) - set(RESULT_COLUMNS)
            if extra:
                raise FormatError(f"unknown result column(s) {sorted(extra)}")
            w.writerow({k: _fmt(row.get(k, "")) for k in RESULT_COLUMNS})


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def read_results(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != RESULT_COLUMNS:
            raise FormatError(f"{path}: unexpected columns {r.fieldnames}")
        return list(r)
