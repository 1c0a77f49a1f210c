import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage
from skimage.morphology import thin as skimage_thin

from crispbench._kernels import RING_GROUPS
from crispbench.edgemap import AnnotationSet, BinaryBoundaryMap, EdgeProbabilityMap, average_maps, resize_bilinear
from crispbench.pipeline import Label, ScaleSet, consensus_labels, guo_hall, multiscale_fuse, thin, thin_array

EIGHT = np.ones((3, 3), dtype=int)
bool_maps = arrays(np.bool_, st.tuples(st.integers(1, 14), st.integers(1, 14)))


def _annotators(counts, n=5):
    """Annotator maps such that pixel i is marked by exactly counts[i] annotators."""
    counts = np.asarray(counts)
    maps = np.zeros((n,) + counts.shape, dtype=bool)
    for k in range(n):
        maps[k] = counts > k
    return AnnotationSet(tuple(BinaryBoundaryMap(m) for m in maps))


# -- consensus -----------------------------------------------------------------

def test_consensus_examples():
    labels = consensus_labels(_annotators([[3, 0, 1, 5, 2]])).labels[0]
    assert labels.tolist() == [Label.POSITIVE, Label.NEGATIVE, Label.IGNORE, Label.POSITIVE, Label.IGNORE]


def test_consensus_min_positive_one_is_ignore_free(rng):
    ann = _annotators(rng.integers(0, 6, (8, 8)))
    assert consensus_labels(ann, 1).count(Label.IGNORE) == 0


def test_consensus_errors():
    with pytest.raises(ValueError):
        consensus_labels(_annotators([[1]]), 0)
    with pytest.raises(ValueError):
        consensus_labels(AnnotationSet(()))


@given(arrays(np.int64, (6, 6), elements=st.integers(0, 5)))
def test_consensus_positive_count_nonincreasing(counts):
    ann = _annotators(counts)
    positives = [consensus_labels(ann, k).count(Label.POSITIVE) for k in range(1, 7)]
    assert positives == sorted(positives, reverse=True)
    lab = consensus_labels(ann, 3)
    assert lab.count(Label.POSITIVE) + lab.count(Label.IGNORE) + lab.count(Label.NEGATIVE) == 36


# -- thinning ------------------------------------------------------------------

def test_thin_keeps_diagonal_line():
    m = BinaryBoundaryMap(np.eye(7, dtype=bool))
    assert thin(m) == m


def test_thin_empty():
    assert thin(BinaryBoundaryMap(np.zeros((5, 5)))).count() == 0


def test_thin_solid_block_matches_reference():
    block = np.zeros((5, 5), dtype=bool)
    block[1:4, 1:4] = True
    expected = np.zeros((5, 5), dtype=bool)
    expected[2, 2] = True  # reference Guo-Hall (skimage) result, frozen
    assert np.array_equal(skimage_thin(block), expected)
    assert np.array_equal(thin(BinaryBoundaryMap(block)).bits, expected)


@settings(max_examples=200, deadline=None)
@given(bool_maps)
def test_guo_hall_matches_reference_implementation(bits):
    assert np.array_equal(guo_hall(bits), skimage_thin(bits))


def _components_preserved(before, after):
    lab_in, n_in = ndimage.label(before, EIGHT)
    for k in range(1, n_in + 1):
        part = after & (lab_in == k)
        if not part.any():
            return False
        if ndimage.label(part, EIGHT)[1] != 1:
            return False
    return True


def _blocks(bits):
    return np.argwhere(bits[:-1, :-1] & bits[1:, :-1] & bits[:-1, 1:] & bits[1:, 1:])


def _ring_code(img, y, x):
    p = np.pad(img, 1).astype(int)
    y, x = y + 1, x + 1
    ring = [p[y, x + 1], p[y - 1, x + 1], p[y - 1, x], p[y - 1, x - 1],
            p[y, x - 1], p[y + 1, x - 1], p[y + 1, x], p[y + 1, x + 1]]
    return sum(v << j for j, v in enumerate(ring))


@settings(max_examples=300, deadline=None)
@given(bool_maps)
def test_thin_properties(bits):
    out = thin_array(bits)
    assert not (out & ~bits).any()
    assert np.array_equal(thin_array(out), out)
    assert _components_preserved(bits, out)
    # any surviving 2x2 block is made of cut points only
    for y, x in _blocks(out):
        for dy in (0, 1):
            for dx in (0, 1):
                assert RING_GROUPS[_ring_code(out, y + dy, x + dx)] != 1


def test_thin_removes_blocks_guo_hall_leaves(rng):
    leftover = 0
    for _ in range(200):
        bits = rng.random((12, 12)) < 0.5
        leftover += len(_blocks(guo_hall(bits))) - len(_blocks(thin_array(bits)))
    assert leftover > 0


def test_unavoidable_block_is_kept():
    # four diagonal spurs hanging off a 2x2 core: no core pixel can go without
    # disconnecting a spur
    x = np.array([[1, 0, 0, 1],
                  [0, 1, 1, 0],
                  [0, 1, 1, 0],
                  [1, 0, 0, 1]], dtype=bool)
    assert np.array_equal(thin_array(x), x)


# -- multi-scale fusion ------------------------------------------------------------

def identity(m):
    return m


def test_fuse_constant():
    out = multiscale_fuse(identity, EdgeProbabilityMap(np.full((6, 10), 0.4)))
    assert np.allclose(out.values, 0.4, atol=1e-15)


def test_fuse_single_scale_is_plain_call(rng):
    img = EdgeProbabilityMap(rng.random((6, 9)))

    def detector(m):
        return EdgeProbabilityMap(m.values ** 2)

    assert multiscale_fuse(detector, img, ScaleSet((1.0,))) == detector(img)
    assert multiscale_fuse(detector, img, [1.0, 1.0, 1.0]) == detector(img)


def test_fuse_matches_explicit_composition(rng):
    img = EdgeProbabilityMap(rng.random((9, 12)))
    half = resize_bilinear(resize_bilinear(img, 6, 4), 12, 9)
    double = resize_bilinear(resize_bilinear(img, 24, 18), 12, 9)
    expected = average_maps([half, img, double])
    assert np.allclose(multiscale_fuse(identity, img).values, expected.values, atol=1e-15)


def test_fuse_errors(rng):
    img = EdgeProbabilityMap(rng.random((4, 4)))
    with pytest.raises(ValueError):
        multiscale_fuse(lambda m: EdgeProbabilityMap(np.zeros((2, 2))), img)
    with pytest.raises(ValueError):
        ScaleSet(())
    with pytest.raises(ValueError):
        ScaleSet((1.0, -0.5))
