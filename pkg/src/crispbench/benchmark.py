"""Boundary benchmark: tolerant pixel matching, PR curves, ODS/OIS/AP.

A predicted boundary pixel counts as correct when it can be paired one-to-one
with a ground-truth pixel no farther than ``d_fraction`` times the image
diagonal. Pairing is a maximum-cardinality bipartite matching over all
admissible pairs; the prediction is matched separately against every
annotator.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import min_weight_full_bipartite_matching

from . import _kernels
from .edgemap import AnnotationSet, BinaryBoundaryMap, EdgeProbabilityMap
from .pipeline import thin_array

__all__ = [
    "BSDS_D0",
    "PASCAL_D0",
    "CURVE_CSV_HEADER",
    "ShapeMismatchError",
    "BenchmarkConfig",
    "MatchCounts",
    "PRPoint",
    "MetricsReport",
    "CrispnessSweep",
    "pixel_tolerance",
    "threshold_grid",
    "correspond_pixels",
    "evaluate_image",
    "evaluate_dataset",
    "aggregate",
    "f_measure",
    "precision_recall",
    "average_precision",
    "crispness_sweep",
    "sweep_gaps",
    "curve_csv",
]

BSDS_D0 = 0.0075
PASCAL_D0 = 0.011
CURVE_CSV_HEADER = ("threshold", "precision", "recall", "f1")
AP_RECALL_SAMPLES = 101


class ShapeMismatchError(ValueError):
    """Prediction and ground truth have different dimensions."""


@dataclass(frozen=True)
class BenchmarkConfig:
    d_fraction: float = BSDS_D0
    n_thresholds: int = 99
    thin_predictions: bool = True

    def __post_init__(self):
        if not self.d_fraction > 0:
            raise ValueError(f"d_fraction must be > 0, got {self.d_fraction}")
        if self.n_thresholds < 1:
            raise ValueError(f"n_thresholds must be >= 1, got {self.n_thresholds}")

    @property
    def thresholds(self) -> np.ndarray:
        return threshold_grid(self.n_thresholds)

    def scaled(self, factor: float) -> "BenchmarkConfig":
        return BenchmarkConfig(self.d_fraction * factor, self.n_thresholds, self.thin_predictions)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MatchCounts:
    """Benchmark accumulators at one threshold.

    ``sum_p``/``cnt_p``: predicted pixels / those matched in at least one
    annotator map, with the per-annotator maximum matchings chosen to cover
    as many predicted pixels as possible. ``sum_r``/``cnt_r``: GT pixels
    summed over annotators / those matched.
    """

    sum_p: int
    cnt_p: int
    sum_r: int
    cnt_r: int

    def __post_init__(self):
        if not (0 <= self.cnt_p <= self.sum_p and 0 <= self.cnt_r <= self.sum_r):
            raise ValueError(f"inconsistent counts {self}")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.sum_p + other.sum_p, self.cnt_p + other.cnt_p,
                           self.sum_r + other.sum_r, self.cnt_r + other.cnt_r)

    def precision_recall(self) -> tuple[float, float]:
        return precision_recall(self)

    def exact_f1(self) -> Fraction:
        return _exact_f(*_exact_pr(self.sum_p, self.cnt_p, self.sum_r, self.cnt_r))

    def f1(self) -> float:
        return float(self.exact_f1())


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    ods: float
    ois: float
    ap: float
    curve: tuple[PRPoint, ...]
    ods_threshold: float

    def to_dict(self) -> dict:
        return {
            "ods": self.ods,
            "ois": self.ois,
            "ap": self.ap,
            "ods_threshold": self.ods_threshold,
            "curve": [asdict(p) for p in self.curve],
        }


@dataclass(frozen=True)
class CrispnessSweep:
    d_fraction: float
    factors: tuple[float, ...]
    reports: tuple[MetricsReport, ...]
    # per factor, per image, per threshold
    counts: tuple = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "d_fraction": self.d_fraction,
            "factors": list(self.factors),
            "reports": [
                {"factor": f, "d_fraction": self.d_fraction * f, **r.to_dict()}
                for f, r in zip(self.factors, self.reports)
            ],
        }


def pixel_tolerance(d_fraction: float, width: int, height: int) -> float:
    """Matching radius in pixels: ``d_fraction`` times the image diagonal."""
    return d_fraction * math.hypot(width, height)


def threshold_grid(n: int) -> np.ndarray:
    """``n`` equally spaced thresholds ``k / (n + 1)``, ``k = 1..n``."""
    if n < 1:
        raise ValueError("need at least one threshold")
    return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


def f_measure(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def precision_recall(c: MatchCounts) -> tuple[float, float]:
    """Empty prediction has precision 1, empty ground truth has recall 1."""
    p = c.cnt_p / c.sum_p if c.sum_p else 1.0
    r = c.cnt_r / c.sum_r if c.sum_r else 1.0
    return p, r


# ---------------------------------------------------------------------------
# Matching

@lru_cache(maxsize=64)
def _offsets(max_dist: float) -> tuple[np.ndarray, np.ndarray]:
    reach = int(math.floor(max_dist))
    cand = [(math.hypot(dy, dx), dy, dx)
            for dy in range(-reach, reach + 1)
            for dx in range(-reach, reach + 1)
            if math.hypot(dy, dx) <= max_dist]
    cand.sort()
    dy = np.array([c[1] for c in cand], dtype=np.int64)
    dx = np.array([c[2] for c in cand], dtype=np.int64)
    dy.setflags(write=False)
    dx.setflags(write=False)
    return dy, dx


def _index_image(bits: np.ndarray) -> tuple[np.ndarray, int]:
    idx = np.full(bits.shape, -1, dtype=np.int64)
    flat = np.flatnonzero(bits)
    idx.flat[flat] = np.arange(flat.size)
    return idx, flat.size


def _bits(m) -> np.ndarray:
    return m.bits if isinstance(m, BinaryBoundaryMap) else np.asarray(m, dtype=bool)


def _candidate_pairs(py, px, gt_idx, dy, dx):
    h, w = gt_idx.shape
    rows, cols, dist = [], [], []
    for oy, ox in zip(dy, dx):
        y, x = py + oy, px + ox
        inside = (y >= 0) & (y < h) & (x >= 0) & (x < w)
        j = np.full(py.size, -1, dtype=np.int64)
        j[inside] = gt_idx[y[inside], x[inside]]
        hit = np.flatnonzero(j >= 0)
        rows.append(hit)
        cols.append(j[hit])
        dist.append(np.full(hit.size, math.hypot(oy, ox)))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(dist)


def _optimal_match(py, px, gt_idx, n_gt, dy, dx) -> np.ndarray:
    """Maximum cardinality, then minimum total distance, solved exactly.

    Every predicted pixel ``p`` gets a dummy partner ``p*`` and every GT pixel
    ``g`` a dummy ``g*``; dummy pairs cost more than all real distances
    together, and ``g* -- p*`` mirrors each real pair at zero cost, so a
    minimum-weight perfect matching of the doubled graph is a maximum
    matching of least total distance.
    """
    n = py.size
    match = np.full(n, -1, dtype=np.int64)
    rows, cols, dist = _candidate_pairs(py, px, gt_idx, dy, dx)
    if rows.size == 0:
        return match
    big = dist.sum() + 1.0
    m = n_gt
    r = np.concatenate([rows, np.arange(n), n + np.arange(m), n + cols])
    c = np.concatenate([cols, m + np.arange(n), np.arange(m), m + rows])
    # +1 keeps every stored weight non-zero; all perfect matchings have n+m edges
    wgt = np.concatenate([dist, np.full(n, big), np.full(m, big), np.zeros(rows.size)]) + 1.0
    graph = csr_matrix((wgt, (r, c)), shape=(n + m, n + m))
    left, right = min_weight_full_bipartite_matching(graph)
    real = (left < n) & (right < m)
    match[left[real]] = right[real]
    return match


def correspond_pixels(pred, gt, max_dist_px: float, return_pairs: bool = False, optimal: bool = False):
    """Match predicted on-pixels to GT on-pixels within ``max_dist_px``.

    Returns boolean masks ``(matched_pred, matched_gt)``; with
    ``return_pairs`` also an ``(k, 4)`` array of ``(py, px, gy, gx)`` rows.
    The matching always has maximum cardinality. By default shorter pairs are
    preferred greedily: all candidate pairs are seeded in ascending distance
    before augmenting paths complete the matching. ``optimal=True`` instead
    minimizes the total matched distance exactly, at a much higher cost.
    """
    pb, gb = _bits(pred), _bits(gt)
    if pb.shape != gb.shape:
        raise ShapeMismatchError(f"prediction {pb.shape} vs ground truth {gb.shape}")
    if max_dist_px < 0:
        raise ValueError("max_dist_px must be >= 0")
    py, px = np.nonzero(pb)
    gt_idx, n_gt = _index_image(gb)
    dy, dx = _offsets(float(max_dist_px))
    py = py.astype(np.int64)
    px = px.astype(np.int64)
    if optimal:
        match = _optimal_match(py, px, gt_idx, n_gt, dy, dx)
    else:
        match = _kernels.match_pixels(py, px, gt_idx[None], n_gt, dy, dx)
    ok = match >= 0
    matched_pred = np.zeros(pb.shape, dtype=bool)
    matched_pred[py[ok], px[ok]] = True
    gflat = np.flatnonzero(gb)[match[ok]]
    matched_gt = np.zeros(gb.shape, dtype=bool)
    matched_gt.flat[gflat] = True
    if not return_pairs:
        return matched_pred, matched_gt
    gy, gx = np.unravel_index(gflat, gb.shape)
    return matched_pred, matched_gt, np.stack([py[ok], px[ok], gy, gx], axis=1)


# ---------------------------------------------------------------------------
# Per-image evaluation

def evaluate_image(pred: EdgeProbabilityMap, gt: AnnotationSet,
                   cfg: BenchmarkConfig = BenchmarkConfig()) -> list[MatchCounts]:
    """Match counts at every threshold of ``cfg``'s grid."""
    if not isinstance(gt, AnnotationSet):
        gt = AnnotationSet(tuple(gt))
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    h, w = pred.shape
    dy, dx = _offsets(pixel_tolerance(cfg.d_fraction, w, h))
    annotators = [_index_image(m.bits) for m in gt]
    sum_r = sum(n for _, n in annotators)
    # all annotators as one GT pool with globally unique ids
    pooled = np.stack([idx for idx, _ in annotators])
    bounds = np.zeros(len(annotators) + 1, dtype=np.int64)
    for a, (layer, (_, n_gt)) in enumerate(zip(pooled, annotators)):
        layer[layer >= 0] += bounds[a]
        bounds[a + 1] = bounds[a] + n_gt
    slots = _kernels._slot_table(pooled, _kernels._reach(dy, dx))
    values = pred.values

    counts: list[MatchCounts] = []
    prev_raw = -1
    for t in cfg.thresholds:
        raw = values >= t
        n_raw = int(np.count_nonzero(raw))
        # binarizations are nested, so an unchanged count means an unchanged map
        if n_raw == prev_raw:
            counts.append(counts[-1])
            continue
        prev_raw = n_raw
        bits = thin_array(raw) if cfg.thin_predictions else raw
        py, px = np.nonzero(bits)
        py = py.astype(np.int64)
        px = px.astype(np.int64)
        # cnt_p is the most predicted pixels that some choice of per-annotator
        # maximum matchings covers jointly: one matching against the pooled GT
        cnt_p, cnt_r = _kernels.match_counts(py, px, *slots, bounds, dy, dx)
        counts.append(MatchCounts(int(py.size), int(cnt_p), sum_r, int(cnt_r)))
    return counts


def _evaluate_pair(args):
    pred, gt, cfg = args
    return evaluate_image(pred, gt, cfg)


def evaluate_dataset(dataset: Sequence[tuple[EdgeProbabilityMap, AnnotationSet]],
                     cfg: BenchmarkConfig = BenchmarkConfig(), jobs: int = 1) -> list[list[MatchCounts]]:
    """:func:`evaluate_image` over a dataset, optionally in worker processes.

    Results come back in dataset order whatever ``jobs`` is.
    """
    work = [(p, g, cfg) for p, g in dataset]
    if jobs <= 1 or len(work) <= 1:
        return [_evaluate_pair(a) for a in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate_pair, work, chunksize=max(1, len(work) // (4 * jobs))))


# ---------------------------------------------------------------------------
# Aggregation

def _exact_pr(sum_p, cnt_p, sum_r, cnt_r) -> tuple[Fraction, Fraction]:
    p = Fraction(int(cnt_p), int(sum_p)) if sum_p else Fraction(1)
    r = Fraction(int(cnt_r), int(sum_r)) if sum_r else Fraction(1)
    return p, r


def _exact_f(p: Fraction, r: Fraction) -> Fraction:
    return Fraction(0) if p + r == 0 else 2 * p * r / (p + r)


def _interpolated_ap(precisions, recalls) -> Fraction:
    total = Fraction(0)
    for i in range(AP_RECALL_SAMPLES):
        level = Fraction(i, AP_RECALL_SAMPLES - 1)
        reach = [p for p, r in zip(precisions, recalls) if r >= level]
        if reach:
            total += max(reach)
    return total / AP_RECALL_SAMPLES


def average_precision(precisions: Sequence[float], recalls: Sequence[float]) -> float:
    """Interpolated AP sampled at 101 recall levels 0, 0.01, ..., 1.

    Precision at recall ``r`` is the best precision among curve points with
    recall ``>= r``; levels no point reaches contribute zero.
    """
    p = [Fraction(v) for v in precisions]
    r = [Fraction(v) for v in recalls]
    return float(_interpolated_ap(p, r))


def aggregate(per_image: Sequence[Sequence[MatchCounts]],
              thresholds: Sequence[float] | None = None) -> MetricsReport:
    """Dataset metrics from per-image, per-threshold counts.

    ``thresholds`` defaults to the standard grid matching the table width.
    ODS and the per-image OIS choices break ties toward the lower threshold.
    Everything is computed in exact rational arithmetic and rounded once, so
    results depend only on the integer counts.
    """
    per_image = [list(c) for c in per_image]
    if not per_image:
        raise ValueError("no images to aggregate")
    n_t = len(per_image[0])
    if n_t == 0 or any(len(c) != n_t for c in per_image):
        raise ValueError("all images must be evaluated on the same non-empty threshold grid")
    thresholds = threshold_grid(n_t) if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if len(thresholds) != n_t:
        raise ValueError("threshold list does not match count tables")

    table = np.array([[(c.sum_p, c.cnt_p, c.sum_r, c.cnt_r) for c in img] for img in per_image],
                     dtype=np.int64)
    totals = table.sum(axis=0)
    pr = [_exact_pr(*row) for row in totals]
    fs = [_exact_f(p, r) for p, r in pr]
    best = fs.index(max(fs))
    curve = tuple(PRPoint(float(t), float(p), float(r), float(f)) for t, (p, r), f in zip(thresholds, pr, fs))

    ois_total = np.zeros(4, dtype=np.int64)
    for img in table:
        img_f = [_exact_f(*_exact_pr(*row)) for row in img]
        ois_total += img[img_f.index(max(img_f))]
    ois = _exact_f(*_exact_pr(*ois_total))

    ap = _interpolated_ap([p for p, _ in pr], [r for _, r in pr])
    return MetricsReport(ods=float(fs[best]), ois=float(ois), ap=float(ap), curve=curve,
                         ods_threshold=float(thresholds[best]))


def crispness_sweep(dataset: Sequence[tuple[EdgeProbabilityMap, AnnotationSet]],
                    cfg: BenchmarkConfig = BenchmarkConfig(),
                    factors: Sequence[float] = (1.0, 0.5, 0.25), jobs: int = 1) -> CrispnessSweep:
    """Full evaluation at ``d_fraction * factor`` for every factor."""
    factors = tuple(float(f) for f in factors)
    if not factors:
        raise ValueError("factor list must not be empty")
    if any(not 0 < f <= 1 for f in factors):
        raise ValueError(f"factors must lie in (0, 1], got {factors}")
    reports, counts = [], []
    for f in factors:
        sub = cfg.scaled(f)
        per_image = evaluate_dataset(dataset, sub, jobs=jobs)
        counts.append(per_image)
        reports.append(aggregate(per_image, sub.thresholds))
    return CrispnessSweep(cfg.d_fraction, factors, tuple(reports), tuple(counts))


def sweep_gaps(first: CrispnessSweep, second: CrispnessSweep) -> list[dict]:
    """Per-factor metric differences ``first - second`` between two detectors."""
    if first.factors != second.factors:
        raise ValueError("sweeps were run with different factors")
    return [
        {"factor": f,
         "ods": a.ods - b.ods,
         "ois": a.ois - b.ois,
         "ap": a.ap - b.ap}
        for f, a, b in zip(first.factors, first.reports, second.reports)
    ]


def curve_csv(curve: Iterable[PRPoint]) -> str:
    """PR curve as CSV text with the fixed header ``threshold,precision,recall,f1``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_CSV_HEADER)
    for p in curve:
        writer.writerow([repr(p.threshold), repr(p.precision), repr(p.recall), repr(p.f1)])
    return buf.getvalue()
