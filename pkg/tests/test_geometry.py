import math

import pytest
from hypothesis import given, strategies as st

from sahiref import geometry as geo
from sahiref.geometry import BBox, FrameTransform

from conftest import boxes


def test_area_examples():
    assert geo.area(BBox(0, 0, 10, 10)) == 100
    assert geo.area(BBox(0, 0, 1, 1)) == 1
    assert geo.area(BBox(2, 3, 7, 11)) == 40


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert geo.iou(a, a) == 1.0
    assert geo.iou(a, BBox(20, 20, 30, 30)) == 0.0
    assert geo.iou(a, BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_ios_examples():
    a = BBox(0, 0, 10, 10)
    assert geo.ios(a, a) == 1.0
    assert geo.ios(a, BBox(2, 2, 4, 4)) == 1.0
    assert geo.ios(a, BBox(5, 0, 15, 10)) == 0.5


def test_contains_boundary_inclusive():
    outer = BBox(0, 0, 128, 128)
    assert geo.contains(outer, BBox(10, 10, 20, 20))
    assert not geo.contains(outer, BBox(120, 10, 130, 20))
    assert geo.contains(outer, BBox(0, 0, 128, 128))
    assert geo.contains(outer, BBox(100, 0, 128, 5))


def test_touching_boxes_have_zero_iou():
    assert geo.iou(BBox(0, 0, 10, 10), BBox(10, 0, 20, 10)) == 0.0
    assert geo.intersection(BBox(0, 0, 10, 10), BBox(10, 0, 20, 10)) is None


@pytest.mark.parametrize("coords", [(0, 0, 0, 5), (0, 0, 5, 0), (3, 0, 1, 5), (0, math.nan, 1, 1),
                                    (0, 0, math.inf, 1)])
def test_degenerate_boxes_rejected(coords):
    with pytest.raises(ValueError):
        BBox(*coords)


def test_transform_examples():
    b = BBox(3, 4, 50, 60)
    assert geo.to_global(geo.IDENTITY, b) == b
    t = FrameTransform(100, 200, 2)
    assert geo.to_global(t, BBox(0, 0, 256, 256)).as_tuple() == (100, 200, 228, 328)


def test_transform_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        FrameTransform(0, 0, 0)


def test_clip():
    assert geo.clip(BBox(-5, -5, 5, 5), 10, 10) == BBox(0, 0, 5, 5)
    assert geo.clip(BBox(11, 0, 12, 5), 10, 10) is None


@given(boxes(), boxes())
def test_overlap_properties(a, b):
    i, s = geo.iou(a, b), geo.ios(a, b)
    assert i == pytest.approx(geo.iou(b, a), abs=1e-12)
    assert s == pytest.approx(geo.ios(b, a), abs=1e-12)
    assert 0.0 <= i <= 1.0 and 0.0 <= s <= 1.0
    assert s >= i - 1e-12


@given(boxes(), boxes())
def test_containment_implies_area_ratio(a, b):
    if geo.contains(a, b):
        assert geo.iou(a, b) == pytest.approx(geo.area(b) / geo.area(a), rel=1e-9)
        assert geo.ios(a, b) == pytest.approx(1.0)


@given(boxes(extent=2000),
       st.floats(-1000, 1000, allow_nan=False),
       st.floats(-1000, 1000, allow_nan=False),
       st.floats(0.25, 8, allow_nan=False))
def test_transform_round_trip(b, ox, oy, s):
    t = FrameTransform(ox, oy, s)
    back = geo.to_local(t, geo.to_global(t, b))
    for u, v in zip(back.as_tuple(), b.as_tuple()):
        assert abs(u - v) <= 1e-9


def test_transform_round_trip_bulk():
    import numpy as np

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10_000):
        t = FrameTransform(*rng.uniform(-2000, 2000, 2), rng.uniform(0.1, 10))
        x0, y0 = rng.uniform(0, 4000, 2)
        b = BBox(x0, y0, x0 + rng.uniform(0.01, 500), y0 + rng.uniform(0.01, 500))
        back = geo.to_local(t, geo.to_global(t, b))
        worst = max(worst, max(abs(u - v) for u, v in zip(back.as_tuple(), b.as_tuple())))
    assert worst <= 1e-9


def test_pairwise_iou_matches_scalar():
    a = [BBox(0, 0, 10, 10), BBox(5, 5, 15, 15)]
    b = [BBox(5, 0, 15, 10), BBox(0, 0, 10, 10), BBox(100, 100, 101, 101)]
    m = geo.pairwise_iou(a, b)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            assert m[i, j] == pytest.approx(geo.iou(x, y))
