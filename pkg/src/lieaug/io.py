"""On-disk formats: binary array bundles with a JSON manifest, CSV tables and generator matrices.

A bundle is ``MAGIC``, an unsigned 64-bit little-endian header length, a UTF-8
JSON header, then the float64 little-endian payloads of every array in header
order. Bundles hold datasets and checkpoints.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from .augmenter import ActionSpec, GeneratorBasis
from .datasets import Dataset
from .numkern import ParamStore

MAGIC = b"LIEAUG\x00\x01"


class FormatError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_bundle(path, arrays: dict[str, np.ndarray], manifest: dict) -> Path:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"manifest": manifest, "arrays": entries}, sort_keys=True).encode()
    _atomic_write(path, MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks))
    return path


def read_bundle(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a bundle file")
    start = len(MAGIC) + 8
    if len(raw) < start:
        raise FormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    try:
        header = json.loads(raw[start : start + hlen])
    except ValueError as e:
        raise FormatError(f"{path}: unreadable header ({e})") from None
    payload = memoryview(raw)[start + hlen :]
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + 8 * count > len(payload):
            raise FormatError(f"{path}: array {e['name']!r} runs past the end of the file")
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return arrays, header["manifest"]


# ---------------------------------------------------------------------------
# datasets


def save_dataset(path, data: Dataset) -> Path:
    arrays = {f"{k}_{s}": getattr(data, f"{k}_{s}") for s in ("train", "val", "test") for k in ("x", "y")}
    if data.truth is not None:
        arrays["truth"] = data.truth
    manifest = {
        "kind": "dataset",
        "name": data.name,
        "seed": data.seed,
        "action": {
            "d": data.action.d,
            "timesteps": data.action.timesteps,
            "output_action": data.action.output_action,
            "timesteps_out": data.action.timesteps_out,
        },
        "sizes": data.sizes(),
        "meta": data.meta,
    }
    return write_bundle(path, arrays, manifest)


def load_dataset(path) -> Dataset:
    arrays, man = read_bundle(path)
    if man.get("kind") != "dataset":
        raise FormatError(f"{path}: not a dataset bundle")
    return Dataset(
        man["name"],
        *(arrays[f"{k}_{s}"] for s in ("train", "val", "test") for k in ("x", "y")),
        action=ActionSpec(**man["action"]),
        truth=arrays.get("truth"),
        seed=man["seed"],
        meta=man["meta"],
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ParamStore, basis: GeneratorBasis | None, manifest: dict) -> Path:
    arrays = {f"param/{n}": params[n] for n in params.names(trainable_only=False)}
    if basis is not None:
        arrays["basis/generators"] = basis.generators
        arrays["basis/mask"] = basis.mask.astype(np.float64)
        manifest = {**manifest, "basis": {"d_norm": basis.d_norm, "init_value": basis.init_value, "collapsed": basis.collapsed}}
    return write_bundle(path, arrays, {"kind": "checkpoint", **manifest})


def load_checkpoint(path) -> tuple[ParamStore, GeneratorBasis | None, dict]:
    arrays, man = read_bundle(path)
    if man.get("kind") != "checkpoint":
        raise FormatError(f"{path}: not a checkpoint bundle")
    store = ParamStore()
    for name, a in arrays.items():
        if name.startswith("param/"):
            store.add(name[len("param/") :], a)
    basis = None
    if "basis/generators" in arrays:
        b = man["basis"]
        basis = GeneratorBasis(arrays["basis/generators"], arrays["basis/mask"] > 0.5, b["init_value"], b["d_norm"], b["collapsed"])
    return store, basis, man


# ---------------------------------------------------------------------------
# CSV


def write_generators(generators: np.ndarray, directory, prefix: str = "generator") -> list[Path]:
    """One CSV per generator, d rows of d comma-separated values."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, L in enumerate(np.asarray(generators)):
        p = directory / f"{prefix}_{i}.csv"
        np.savetxt(p, L, delimiter=",", fmt="%.17g")
        paths.append(p)
    return paths


def read_generators(paths) -> np.ndarray:
    mats = []
    for p in paths:
        L = np.atleast_2d(np.loadtxt(p, delimiter=",", dtype=np.float64))
        if L.shape[0] != L.shape[1]:
            raise FormatError(f"{p}: generator must be square, got {L.shape}")
        mats.append(L)
    if not mats:
        raise FormatError("no generator files given")
    if len({m.shape for m in mats}) != 1:
        raise FormatError("generator files have different sizes")
    return np.stack(mats)


def write_rows(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
