"""Edge-map preparation: consensus labels, thinning, multi-scale fusion."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .edgemap import (
    AnnotationSet,
    BinaryBoundaryMap,
    EdgeProbabilityMap,
    average_maps,
    resize_bilinear,
)

__all__ = [
    "Label",
    "LabelMap",
    "ScaleSet",
    "consensus_labels",
    "thin",
    "thin_array",
    "guo_hall",
    "multiscale_fuse",
]


class Label(IntEnum):
    NEGATIVE = 0
    IGNORE = 1
    POSITIVE = 2


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Tri-state training labels; ``labels`` holds :class:`Label` values."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.uint8)
        if lab.ndim != 2:
            raise ValueError("label map must be 2-D")
        if lab.size and lab.max() > Label.POSITIVE:
            raise ValueError("labels must be NEGATIVE, IGNORE or POSITIVE")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def count(self, label: Label) -> int:
        return int(np.count_nonzero(self.labels == label))


@dataclass(frozen=True)
class ScaleSet:
    factors: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        factors = tuple(float(f) for f in self.factors)
        if not factors:
            raise ValueError("scale set must not be empty")
        if any(not f > 0 for f in factors):
            raise ValueError(f"scale factors must be positive, got {factors}")
        object.__setattr__(self, "factors", factors)


def consensus_labels(annotations: AnnotationSet, min_positive: int = 3) -> LabelMap:
    """Positive where at least ``min_positive`` annotators agree, negative where
    nobody marked the pixel, ignore otherwise."""
    if min_positive < 1:
        raise ValueError("min_positive must be >= 1")
    if not isinstance(annotations, AnnotationSet):
        annotations = AnnotationSet(tuple(annotations))
    votes = np.zeros(annotations.shape, dtype=np.int64)
    for m in annotations:
        votes += m.bits
    labels = np.full(votes.shape, Label.IGNORE, dtype=np.uint8)
    labels[votes == 0] = Label.NEGATIVE
    labels[votes >= min_positive] = Label.POSITIVE
    return LabelMap(labels)


def _padded(bits: np.ndarray) -> np.ndarray:
    img = np.zeros((bits.shape[0] + 2, bits.shape[1] + 2), dtype=np.uint8)
    img[1:-1, 1:-1] = bits
    return img


def thin_array(bits: np.ndarray) -> np.ndarray:
    """Array-level :func:`thin`; works on the bounding box of the on-pixels."""
    bits = np.asarray(bits, dtype=bool)
    rows = np.flatnonzero(bits.any(axis=1))
    if rows.size == 0:
        return np.zeros_like(bits)
    cols = np.flatnonzero(bits.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    img = _padded(bits[r0:r1, c0:c1])
    _kernels.thin_inplace(img, _kernels.GUO_HALL_FIRST, _kernels.GUO_HALL_SECOND, _kernels.RING_GROUPS)
    out = np.zeros_like(bits)
    out[r0:r1, c0:c1] = img[1:-1, 1:-1].astype(bool)
    return out


def guo_hall(bits: np.ndarray) -> np.ndarray:
    """Unmodified two-subiteration Guo-Hall thinning."""
    img = _padded(np.asarray(bits, dtype=bool))
    _kernels.guo_hall_inplace(img, _kernels.GUO_HALL_FIRST, _kernels.GUO_HALL_SECOND)
    return img[1:-1, 1:-1].astype(bool)


def thin(boundary: BinaryBoundaryMap) -> BinaryBoundaryMap:
    """Reduce a binary boundary map to unit width.

    Guo-Hall thinning, followed by removal of pixels that still form fully-on
    2x2 blocks wherever that can be done without splitting an 8-connected
    component; the two steps alternate until nothing changes. A block is
    left in place only when every one of its pixels is a cut point (e.g. four
    diagonal spurs meeting at the block).
    """
    return BinaryBoundaryMap(thin_array(boundary.bits))


def multiscale_fuse(run_detector: Callable[[EdgeProbabilityMap], EdgeProbabilityMap],
                    image: EdgeProbabilityMap,
                    scales: ScaleSet | Sequence[float] = ScaleSet()) -> EdgeProbabilityMap:
    """Run ``run_detector`` at each scale, resize back, and average.

    Scaled sizes are ``max(1, round(factor * size))`` per axis.
    """
    if not isinstance(scales, ScaleSet):
        scales = ScaleSet(tuple(scales))
    h, w = image.shape
    outputs = []
    for f in scales.factors:
        sh, sw = max(1, round(f * h)), max(1, round(f * w))
        scaled = resize_bilinear(image, sw, sh)
        detected = run_detector(scaled)
        if detected.shape != scaled.shape:
            raise ValueError(f"detector returned shape {detected.shape} for input {scaled.shape}")
        outputs.append(resize_bilinear(detected, w, h))
    return average_maps(outputs)
