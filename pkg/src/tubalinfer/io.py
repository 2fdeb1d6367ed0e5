"""File formats: binary tensors, CSV import, observation and factor files.

Binary tensor (``.tns3``)::

    b"TNS3" | u32 version=1 | u32 d1 | u32 d2 | u32 d3 | d1*d2*d3 float64

All integers and floats are little-endian.  Values are written with the
first index varying fastest and the slice index ``l`` slowest, so each
frontal slice is one contiguous block.

Files use 1-based ``(j, k, l)`` indices; the Python API is 0-based.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .sampling import ObservationSet
from .tensor_core import as_tensor3
from .tsvd import TsvdFactors

__all__ = [
    "MAGIC",
    "VERSION",
    "TensorFormatError",
    "save_tensor",
    "load_tensor",
    "load_csv_slices",
    "load_csv_long",
    "save_observations",
    "load_observations",
    "save_factors",
    "load_factors",
    "write_csv",
    "read_csv",
]

MAGIC = b"TNS3"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class TensorFormatError(ValueError):
    """Malformed tensor or observation file."""


def save_tensor(path, T: np.ndarray) -> None:
    T = as_tensor3(T)
    d1, d2, d3 = T.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d1, d2, d3))
        fh.write(np.asarray(T, dtype="<f8").tobytes(order="F"))


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: file too short for a TNS3 header")
    magic, version, d1, d2, d3 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    count = d1 * d2 * d3
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise TensorFormatError(
            f"{path}: expected {8 * count} data bytes for {(d1, d2, d3)}, found {len(body)}"
        )
    return np.frombuffer(body, dtype="<f8").reshape((d1, d2, d3), order="F").astype(np.float64)


def load_csv_slices(paths) -> np.ndarray:
    """Stack one ``d1 x d2`` CSV matrix per frontal slice, in the given order."""
    slices = [np.loadtxt(p, delimiter=",", ndmin=2) for p in paths]
    if not slices:
        raise TensorFormatError("no slice files given")
    shape = slices[0].shape
    for p, s in zip(paths, slices):
        if s.shape != shape:
            raise TensorFormatError(f"{p}: slice shape {s.shape} differs from {shape}")
    return as_tensor3(np.stack(slices, axis=2))


def load_csv_long(path, dims=None) -> np.ndarray:
    """Long-format CSV with columns ``j,k,l,value`` (1-based, optional header).

    Entries that are not listed are NaN.  ``dims`` defaults to the largest
    index seen along each axis.
    """
    data = np.genfromtxt(path, delimiter=",", names=None, dtype=float)
    data = np.atleast_2d(data)
    data = data[~np.isnan(data).all(axis=1)]  # header row parses as NaN
    if data.shape[1] != 4:
        raise TensorFormatError(f"{path}: expected 4 columns, got {data.shape[1]}")
    idx = data[:, :3].astype(np.int64) - 1
    if idx.min() < 0:
        raise TensorFormatError(f"{path}: indices must be 1-based")
    if dims is None:
        dims = tuple(int(v) for v in idx.max(axis=0) + 1)
    elif np.any(idx.max(axis=0) >= np.asarray(dims)):
        raise TensorFormatError(f"{path}: index out of range for dims {tuple(dims)}")
    out = np.full(tuple(dims), np.nan)
    out[tuple(idx.T)] = data[:, 3]
    return out


def save_observations(path, obs: ObservationSet) -> None:
    """JSON lines: a header record, then one ``{j, k, l, y}`` record per observation."""
    header = {
        "dims": list(obs.dims),
        "n": obs.n,
        "sigma_xi": None if np.isnan(obs.sigma_xi) else float(obs.sigma_xi),
        "seed": obs.seed,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for (j, k, l), y in zip(obs.idx.tolist(), obs.y.tolist()):
            fh.write(json.dumps({"j": j + 1, "k": k + 1, "l": l + 1, "y": y}) + "\n")


def load_observations(path) -> ObservationSet:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise TensorFormatError(f"{path}: empty observation file")
    try:
        header = json.loads(lines[0])
        dims = tuple(header["dims"])
        recs = [json.loads(ln) for ln in lines[1:]]
        idx = np.array([[r["j"], r["k"], r["l"]] for r in recs], dtype=np.int64).reshape(-1, 3) - 1
        y = np.array([r["y"] for r in recs], dtype=np.float64)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"{path}: {exc}") from exc
    if "n" in header and header["n"] != len(recs):
        raise TensorFormatError(f"{path}: header says n={header['n']}, found {len(recs)} records")
    sigma = header.get("sigma_xi")
    return ObservationSet(dims, idx, y,
                          sigma_xi=float("nan") if sigma is None else float(sigma),
                          seed=header.get("seed"))


def save_factors(stem, f: TsvdFactors) -> None:
    """Write ``<stem>.U.tns3``, ``<stem>.S.tns3``, ``<stem>.V.tns3`` and ``<stem>.json``."""
    stem = str(stem)
    save_tensor(stem + ".U.tns3", f.U)
    save_tensor(stem + ".S.tns3", f.S)
    save_tensor(stem + ".V.tns3", f.V)
    meta = {"r": f.r, "tol": f.tol, "lambda_min": f.lambda_min, "lambda_max": f.lambda_max}
    Path(stem + ".json").write_text(json.dumps(meta, indent=2))


def load_factors(stem) -> TsvdFactors:
    stem = str(stem)
    meta = json.loads(Path(stem + ".json").read_text())
    U = load_tensor(stem + ".U.tns3")
    S = load_tensor(stem + ".S.tns3")
    V = load_tensor(stem + ".V.tns3")
    svals = np.fft.fft(np.stack([S[i, i, :] for i in range(S.shape[0])]), axis=1).real
    return TsvdFactors(U=U, S=S, V=V, svals=svals, r=int(meta["r"]), tol=float(meta["tol"]))


def write_csv(path, header, rows, schema: str | None = None) -> None:
    """CSV writer with an optional ``# schema=...`` first line."""
    with open(path, "w", newline="") as fh:
        if schema is not None:
            fh.write(f"# schema={schema}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv` as dicts (schema line skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
