"""Binary field container, JSON sidecars and checkpoints.

Layout of a ``.vfb`` file::

    b"VFPNSBIN"            8-byte magic
    b"<" or b">"           endianness tag of the header length (always "<" when written here)
    uint32 header length   little-endian
    header                 UTF-8 JSON: field name, grid descriptors, shape, dtype
    payload                row-major little-endian float64 values

The sidecar ``<file>.json`` holds free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"VFPNSBIN"
FORMAT_VERSION = 1


class ContainerError(IOError):
    pass


def _canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_field(path: str | Path, name: str, values: np.ndarray, grid: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype="<f8")
    header = {
        "version": FORMAT_VERSION,
        "name": name,
        "grid": grid,
        "shape": list(arr.shape),
        "dtype": "float64",
        "endianness": "little",
        "order": "C",
    }
    blob = _canonical_json(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"<")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes(order="C"))
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta or {}, sort_keys=True, indent=1) + "\n")
    return path


def read_field(path: str | Path) -> tuple[np.ndarray, dict, dict]:
    """Return ``(values, header, sidecar_metadata)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ContainerError(f"{path}: not a field container")
        tag = fh.read(1)
        if tag not in (b"<", b">"):
            raise ContainerError(f"{path}: bad endianness tag {tag!r}")
        (hlen,) = struct.unpack(tag.decode() + "I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        order = "<" if header.get("endianness", "little") == "little" else ">"
        data = np.frombuffer(fh.read(), dtype=order + "f8")
    shape = tuple(header["shape"])
    if data.size != int(np.prod(shape)):
        raise ContainerError(f"{path}: payload size {data.size} does not match shape {shape}")
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return data.reshape(shape).astype(np.float64), header, meta


def write_checkpoint(directory: str | Path, fields: dict[str, np.ndarray], grid: dict, meta: dict) -> Path:
    """Store several named fields plus a JSON manifest in ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, values in fields.items():
        write_field(directory / f"{name}.vfb", name, values, grid, {"checkpoint": True})
    manifest = dict(meta)
    manifest["fields"] = sorted(fields)
    manifest["grid"] = grid
    (directory / "checkpoint.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return directory


def read_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest_path = directory / "checkpoint.json"
    if not manifest_path.exists():
        raise ContainerError(f"{directory}: no checkpoint.json")
    manifest = json.loads(manifest_path.read_text())
    fields = {name: read_field(directory / f"{name}.vfb")[0] for name in manifest["fields"]}
    return fields, manifest


def write_grid_csv(path: str | Path, values: np.ndarray) -> Path:
    """Plain CSV export of a 2D array (one grid row per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in np.atleast_2d(values):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    return path
