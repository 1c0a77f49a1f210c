"""Binary tensor files: four little-endian uint32 dims, then float64 LE values."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<4I")
FORMAT_NAME = "crispbench.tensor4/f64le"


def tensor_bytes(arr) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected a rank-4 array, got shape {arr.shape}")
    return _HEADER.pack(*arr.shape) + arr.astype("<f8").tobytes(order="C")


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated tensor header")
    dims = _HEADER.unpack_from(data)
    n = int(np.prod(dims))
    if len(data) != _HEADER.size + 8 * n:
        raise ValueError(f"{path}: expected {n} values for dims {dims}, file has {(len(data) - _HEADER.size) / 8}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(dims).astype(np.float64)


def write_bundle(directory, tensors: dict, meta: dict | None = None, sidecar: str = "tensors.json") -> Path:
    """Write ``name.bin`` per tensor plus a JSON sidecar describing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        fname = f"{name}.bin"
        write_tensor(directory / fname, arr)
        entries[name] = {"file": fname, "dims": list(arr.shape)}
    doc = {"format": FORMAT_NAME, **(meta or {}), "tensors": entries}
    out = directory / sidecar
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out


def read_bundle(sidecar_path) -> tuple[dict, dict[str, np.ndarray]]:
    sidecar_path = Path(sidecar_path)
    doc = json.loads(sidecar_path.read_text())
    tensors = {}
    for name, entry in doc["tensors"].items():
        arr = read_tensor(sidecar_path.parent / entry["file"])
        if list(arr.shape) != entry["dims"]:
            raise ValueError(f"{name}: dims {arr.shape} disagree with sidecar {entry['dims']}")
        tensors[name] = arr
    return doc, tensors
