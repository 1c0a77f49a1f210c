"""Raster types and basic operations on edge maps.

Edge maps are stored as 2-D numpy arrays indexed ``[row, col]``. The wrapper
types only validate and freeze those arrays; every operation here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

__all__ = [
    "EdgeProbabilityMap",
    "BinaryBoundaryMap",
    "AnnotationSet",
    "ImageFormatError",
    "load_gray",
    "load_binary",
    "save_gray",
    "binarize",
    "resize_bilinear",
    "average_maps",
]


class ImageFormatError(ValueError):
    """Raised when an image file cannot be read as a single-channel raster."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EdgeProbabilityMap:
    """Per-pixel edge confidence in ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"edge map must be a non-empty 2-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("edge map values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, EdgeProbabilityMap):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class BinaryBoundaryMap:
    """Binarized boundary raster."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError(f"boundary map must be a non-empty 2-D array, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b.astype(bool)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other):
        if not isinstance(other, BinaryBoundaryMap):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))


@dataclass(frozen=True)
class AnnotationSet:
    """Boundary maps drawn by several annotators for one image."""

    maps: tuple[BinaryBoundaryMap, ...]

    def __post_init__(self):
        maps = tuple(m if isinstance(m, BinaryBoundaryMap) else BinaryBoundaryMap(m) for m in self.maps)
        if not maps:
            raise ValueError("annotation set must contain at least one map")
        shape = maps[0].shape
        for m in maps[1:]:
            if m.shape != shape:
                raise ValueError(f"annotator maps differ in shape: {shape} vs {m.shape}")
        object.__setattr__(self, "maps", maps)

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps[0].shape

    def __len__(self) -> int:
        return len(self.maps)

    def __iter__(self):
        return iter(self.maps)


# ---------------------------------------------------------------------------
# I/O

def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: only binary (P5) PGM is supported")
    # header: magic, width, height, maxval, each separated by whitespace; '#' starts a comment
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        fields.append(int(data[start:pos]))
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: zero-dimension image")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height
    raw = np.frombuffer(data, dtype=dtype, count=n, offset=pos) if len(data) - pos >= n * dtype.itemsize else None
    if raw is None:
        raise ImageFormatError(f"{path}: truncated PGM pixel data")
    return raw.reshape(height, width)


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("L", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        elif im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.int64)
            if arr.min() < 0 or arr.max() > 65535:
                raise ImageFormatError(f"{path}: pixel values exceed 16 bits")
            arr = arr.astype(np.uint16)
        else:
            raise ImageFormatError(f"{path}: expected a single-channel image, got mode {im.mode}")
    if arr.ndim != 2:
        raise ImageFormatError(f"{path}: expected a single-channel image")
    return arr


def _read_raw(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        if path.suffix.lower() in (".pgm", ".pnm"):
            arr = _read_pgm(path)
        else:
            arr = _read_png(path)
    except ImageFormatError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    if arr.size == 0:
        raise ImageFormatError(f"{path}: zero-dimension image")
    return arr


def load_gray(path) -> EdgeProbabilityMap:
    """Load an 8- or 16-bit single-channel PNG/PGM as an edge map.

    Values are divided by the format's maximum (255 or 65535), not by the
    observed maximum.
    """
    arr = _read_raw(path)
    scale = 65535.0 if arr.dtype.itemsize == 2 else 255.0
    return EdgeProbabilityMap(arr.astype(np.float64) / scale)


def load_binary(path) -> BinaryBoundaryMap:
    """Load a boundary image; any non-zero pixel is on."""
    return BinaryBoundaryMap(_read_raw(path) > 0)


def save_gray(edge_map, path, bits: int = 8) -> None:
    """Write an edge map (or a ``[0,1]`` array) as PNG or PGM with rounding."""
    values = edge_map.values if isinstance(edge_map, EdgeProbabilityMap) else np.asarray(edge_map, dtype=np.float64)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    path = Path(path)
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(values, 0.0, 1.0) * maxval)
    if path.suffix.lower() in (".pgm", ".pnm"):
        dtype = "u1" if bits == 8 else ">u2"
        header = f"P5\n{q.shape[1]} {q.shape[0]}\n{maxval}\n".encode("ascii")
        path.write_bytes(header + q.astype(dtype).tobytes())
    elif bits == 8:
        Image.fromarray(q.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(q.astype(np.uint16)).save(path)


# ---------------------------------------------------------------------------
# Operations

def binarize(edge_map: EdgeProbabilityMap, threshold: float) -> BinaryBoundaryMap:
    """Pixels with confidence ``>= threshold`` are on."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return BinaryBoundaryMap(edge_map.values >= threshold)


def _axis_weights(n_in: int, n_out: int, align_corners: bool):
    out = np.arange(n_out, dtype=np.float64)
    if align_corners:
        src = out * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    else:
        src = np.clip((out + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1)
    lo = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def _resize_array(values: np.ndarray, target_h: int, target_w: int, align_corners: bool) -> np.ndarray:
    h, w = values.shape
    r0, r1, fr = _axis_weights(h, target_h, align_corners)
    c0, c1, fc = _axis_weights(w, target_w, align_corners)
    rows = values[r0] * (1.0 - fr)[:, None] + values[r1] * fr[:, None]
    out = rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc
    # convex combinations can overshoot by an ulp
    return np.clip(out, values.min(), values.max())


def resize_bilinear(edge_map: EdgeProbabilityMap, target_w: int, target_h: int,
                    align_corners: bool = True) -> EdgeProbabilityMap:
    """Bilinear resampling to ``target_w`` x ``target_h``.

    With ``align_corners`` (the default) the first and last samples of each
    axis map onto each other. ``align_corners=False`` uses half-pixel centres
    with edge clamping, which is what a stride-k bilinear deconvolution
    computes away from the border.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (target_h, target_w) == edge_map.shape:
        return edge_map
    return EdgeProbabilityMap(_resize_array(edge_map.values, int(target_h), int(target_w), align_corners))


def average_maps(maps: Sequence[EdgeProbabilityMap]) -> EdgeProbabilityMap:
    """Pixel-wise arithmetic mean of equally sized maps."""
    maps = list(maps)
    if not maps:
        raise ValueError("cannot average an empty list of maps")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"map shapes differ: {shape} vs {m.shape}")
    # sorted per pixel so the result does not depend on list order; offsets
    # from the minimum make the mean of identical maps exact
    stack = np.sort(np.stack([m.values for m in maps]), axis=0)
    low = stack[0]
    return EdgeProbabilityMap(np.clip(low + (stack - low).sum(axis=0) / len(maps), 0.0, 1.0))
