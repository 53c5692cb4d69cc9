"""Binary wavefunctions, NDJSON tables, CSV plot data.

Wavefunction files carry a fixed 16-byte header (magic 'TAND', format
version, axis count, spare) followed by raw little-endian float64 in axis
order; complex states are stored as interleaved (re, im) pairs. Everything
else about the state - grid, disorder spec, energy, residual, seed - lives
in a JSON sidecar next to the binary, which keeps the payload mmap-able and
the metadata greppable.

NDJSON writers sort keys and never include timestamps: identical inputs
must produce byte-identical files whatever the worker count.
"""

import csv
import json
import os
import struct

import numpy as np

WF_MAGIC = b"TAND"
WF_VERSION = 1
_HEADER = struct.Struct("<4sII4x")  # magic, version, dims, spare


def sidecar_path(path):
    return str(path) + ".json"


def write_wavefunction(path, psi, grid, spec=None, energy=None, residual=None,
                       seed=None, extra=None):
    psi = np.asarray(psi)
    if psi.shape != grid.shape:
        raise ValueError(f"state shape {psi.shape} != grid {grid.shape}")
    complex_valued = np.iscomplexobj(psi)
    if complex_valued:
        flat = np.empty(2 * psi.size, dtype="<f8")
        flat[0::2] = psi.real.ravel()
        flat[1::2] = psi.imag.ravel()
    else:
        flat = np.ascontiguousarray(psi.ravel(), dtype="<f8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(WF_MAGIC, WF_VERSION, grid.dims))
        f.write(flat.tobytes())
    meta = {
        "grid": {"n": list(grid.n), "delta": list(grid.delta),
                 "boundary": grid.boundary},
        "dtype": "complex128" if complex_valued else "float64",
        "spec": spec.to_dict() if spec is not None else None,
        "E": energy,
        "residual": residual,
        "seed": seed,
    }
    if extra:
        meta.update(extra)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
        f.write("\n")
    return sidecar_path(path)


def read_wavefunction(path):
    """(psi, meta) with psi reshaped to the sidecar grid."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, dims = _HEADER.unpack(head)
        if magic != WF_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != WF_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        raw = np.frombuffer(f.read(), dtype="<f8")
    with open(sidecar_path(path), "r", encoding="utf-8") as f:
        meta = json.load(f)
    shape = tuple(meta["grid"]["n"])
    if len(shape) != dims:
        raise ValueError(f"{path}: header dims {dims} != sidecar {len(shape)}")
    if meta.get("dtype") == "complex128":
        psi = (raw[0::2] + 1j * raw[1::2]).reshape(shape)
    else:
        psi = raw.reshape(shape)
    return psi, meta


def write_ndjson(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_ndjson(path):
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_csv(path, columns):
    """columns: ordered {name: 1D array}, all the same length."""
    names = list(columns)
    arrays = [np.asarray(columns[k]).ravel() for k in names]
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"column lengths differ: {sorted(lengths)}")
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                        else v for v in row])


def read_csv(path):
    """Inverse of write_csv: ordered {name: float array}."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    names = rows[0]
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [[] for _ in names]
    return {name: np.array([float(v) for v in col])
            for name, col in zip(names, cols)}


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
