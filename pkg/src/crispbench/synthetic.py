"""Synthetic boundary fixtures for tests, demos and timing runs."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .edgemap import AnnotationSet, BinaryBoundaryMap, EdgeProbabilityMap
from .pipeline import thin_array

BSDS_SHAPE = (321, 481)


def _draw_polyline(canvas: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> None:
    h, w = canvas.shape
    ys = np.rint(ys).astype(int)
    xs = np.rint(xs).astype(int)
    ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    canvas[ys[ok], xs[ok]] = True


def contour_map(shape=BSDS_SHAPE, n_curves: int = 6, rng=None) -> np.ndarray:
    """Thin boolean map of random ellipses and segments.

    The result is already a fixed point of :func:`crispbench.pipeline.thin`.
    """
    rng = np.random.default_rng(rng)
    h, w = shape
    canvas = np.zeros(shape, dtype=bool)
    for _ in range(n_curves):
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            ry, rx = rng.uniform(8, h / 3), rng.uniform(8, w / 3)
            t = np.linspace(0, 2 * np.pi, int(8 * (ry + rx)))
            _draw_polyline(canvas, cy + ry * np.sin(t), cx + rx * np.cos(t))
        else:
            y0, y1 = rng.uniform(0, h, 2)
            x0, x1 = rng.uniform(0, w, 2)
            n = int(3 * max(abs(y1 - y0), abs(x1 - x0))) + 2
            _draw_polyline(canvas, np.linspace(y0, y1, n), np.linspace(x0, x1, n))
    return thin_array(canvas)


def annotator_maps(base: np.ndarray, n_annotators: int = 5, jitter: float = 0.6, rng=None) -> list[np.ndarray]:
    """Independent annotator variants of ``base``.

    Each annotator drops a random share of pixels and displaces the rest by
    at most one pixel, then the map is thinned.
    """
    rng = np.random.default_rng(rng)
    h, w = base.shape
    ys, xs = np.nonzero(base)
    out = []
    for _ in range(n_annotators):
        keep = rng.random(ys.size) < 0.85
        dy = np.where(rng.random(ys.size) < jitter, rng.integers(-1, 2, ys.size), 0)
        dx = np.where(rng.random(ys.size) < jitter, rng.integers(-1, 2, ys.size), 0)
        m = np.zeros((h, w), dtype=bool)
        y = np.clip(ys[keep] + dy[keep], 0, h - 1)
        x = np.clip(xs[keep] + dx[keep], 0, w - 1)
        m[y, x] = True
        out.append(thin_array(m))
    return out


def soft_prediction(base: np.ndarray, width: float = 1.5, noise: float = 0.05,
                    quantize: int | None = 255, rng=None) -> np.ndarray:
    """Blurry detector response: confidence decays with distance to ``base``."""
    rng = np.random.default_rng(rng)
    dist = ndimage.distance_transform_edt(~base)
    p = np.exp(-0.5 * (dist / width) ** 2) * rng.uniform(0.6, 1.0, base.shape)
    p = np.clip(p + noise * rng.random(base.shape) ** 4, 0.0, 1.0)
    if quantize:
        p = np.rint(p * quantize) / quantize
    return p


def shift(bits: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate a boolean map, dropping pixels pushed off the canvas."""
    out = np.zeros_like(bits)
    h, w = bits.shape
    src = bits[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def perfect_dataset(n_images: int = 20, shape=(64, 96), n_annotators: int = 3, seed: int = 0):
    """Predictions equal to thin GT; annotators each draw a subset of the curves.

    Curves are drawn far enough apart that every subset stays thin.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    data = []
    for _ in range(n_images):
        curves = []
        n_rows = max(2, h // 12)
        rows = rng.choice(np.arange(3, h - 3, 6), size=min(n_rows, len(range(3, h - 3, 6))), replace=False)
        for r in rows:
            c = np.zeros(shape, dtype=bool)
            x0, x1 = sorted(rng.integers(2, w - 2, 2))
            c[r, x0:x1 + 1] = True
            curves.append(c)
        union = np.any(curves, axis=0)
        # every curve has at least one annotator, every annotator at least one curve
        picks = rng.random((n_annotators, len(curves))) < 0.7
        picks[rng.integers(n_annotators, size=len(curves)), np.arange(len(curves))] = True
        picks[np.arange(n_annotators), rng.integers(len(curves), size=n_annotators)] = True
        annotators = []
        for pick in picks:
            annotators.append(BinaryBoundaryMap(np.any([c for c, k in zip(curves, pick) if k], axis=0)))
        data.append((EdgeProbabilityMap(union.astype(np.float64)), AnnotationSet(tuple(annotators))))
    return data


def shifted_dataset(n_images: int = 10, shape=BSDS_SHAPE, offset: int = 2, seed: int = 0):
    """Straight horizontal GT lines with predictions displaced ``offset`` rows."""
    rng = np.random.default_rng(seed)
    h, w = shape
    data = []
    for _ in range(n_images):
        gt = np.zeros(shape, dtype=bool)
        for r in rng.choice(np.arange(10, h - 10, 12), size=5, replace=False):
            x0, x1 = sorted(rng.integers(5, w - 5, 2))
            gt[r, x0:x1 + 1] = True
        pred = shift(gt, offset, 0)
        data.append((EdgeProbabilityMap(pred.astype(np.float64)), AnnotationSet((BinaryBoundaryMap(gt),))))
    return data


def blurry_dataset(n_images: int = 200, shape=BSDS_SHAPE, n_annotators: int = 5, seed: int = 0):
    """Soft predictions against jittered multi-annotator GT (timing fixture)."""
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n_images):
        base = contour_map(shape, int(rng.integers(4, 9)), rng)
        gts = annotator_maps(base, n_annotators, rng=rng)
        pred = soft_prediction(base, rng=rng)
        data.append((EdgeProbabilityMap(pred), AnnotationSet(tuple(BinaryBoundaryMap(g) for g in gts))))
    return data
