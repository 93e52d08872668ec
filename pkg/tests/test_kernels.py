import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sahiref import _kernels
from sahiref._kernels import IMPLEMENTATIONS, METRIC_IOS, METRIC_IOU

NP, NB = IMPLEMENTATIONS["numpy"], IMPLEMENTATIONS["numba"]


@st.composite
def box_arrays(draw, max_n=25):
    n = draw(st.integers(0, max_n))
    # integer-ish grid makes exact ties and touching edges common
    xy = draw(arrays(np.int64, (n, 2), elements=st.integers(0, 40))).astype(np.float64)
    wh = draw(arrays(np.int64, (n, 2), elements=st.integers(1, 20))).astype(np.float64)
    return np.hstack([xy, xy + wh]) if n else np.zeros((0, 4))


@given(box_arrays(), box_arrays(), st.sampled_from([METRIC_IOU, METRIC_IOS]))
def test_pairwise_overlap_equivalent(a, b, metric):
    np.testing.assert_allclose(NP["pairwise_overlap"](a, b, metric), NB["pairwise_overlap"](a, b, metric),
                               rtol=0, atol=1e-12)


@given(box_arrays(), st.floats(0, 1), st.sampled_from([METRIC_IOU, METRIC_IOS]), st.booleans(), st.data())
def test_nms_equivalent(boxes, thr, metric, agnostic, data):
    classes = np.array(data.draw(st.lists(st.integers(0, 2), min_size=len(boxes), max_size=len(boxes))),
                       dtype=np.int64)
    assert np.array_equal(NP["nms"](boxes, classes, thr, metric, agnostic),
                          NB["nms"](boxes, classes, thr, metric, agnostic))


@given(box_arrays(12), box_arrays(12), st.floats(0.05, 1), st.data())
def test_greedy_match_equivalent(p, t, thr, data):
    ov = NP["pairwise_overlap"](p, t, METRIC_IOU)
    pc = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(p), max_size=len(p))), dtype=np.int64)
    tc = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(t), max_size=len(t))), dtype=np.int64)
    rank = np.array(data.draw(st.permutations(list(range(len(t))))), dtype=np.int64)
    assert np.array_equal(NP["greedy_match"](ov, pc, tc, rank, thr), NB["greedy_match"](ov, pc, tc, rank, thr))


@given(arrays(np.uint8, st.tuples(st.integers(1, 16), st.integers(1, 16))), st.integers(1, 40),
       st.integers(1, 40))
def test_upscale_equivalent(pixels, oh, ow):
    assert np.array_equal(NP["upscale_nearest"](pixels, oh, ow), NB["upscale_nearest"](pixels, oh, ow))


def test_nms_suppresses_only_above_threshold():
    boxes = np.array([[0, 0, 10, 10], [5, 0, 15, 10]], dtype=float)  # IoU 1/3
    cls = np.zeros(2, dtype=np.int64)
    for impl in (NP, NB):
        assert impl["nms"](boxes, cls, 1 / 3, METRIC_IOU, False).tolist() == [-1, -1]
        assert impl["nms"](boxes, cls, 0.3, METRIC_IOU, False).tolist() == [-1, 0]


def test_greedy_match_ties_go_to_lower_rank():
    ov = np.array([[0.6, 0.6]])
    cls = np.zeros(1, dtype=np.int64)
    tcls = np.zeros(2, dtype=np.int64)
    for impl in (NP, NB):
        assert impl["greedy_match"](ov, cls, tcls, np.array([1, 0]), 0.5).tolist() == [1]
        assert impl["greedy_match"](ov, cls, tcls, np.array([0, 1]), 0.5).tolist() == [0]


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, SAHIREF_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from sahiref import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_default_backend_is_numba_when_available():
    pytest.importorskip("numba")
    if os.environ.get("SAHIREF_DISABLE_NUMBA"):
        pytest.skip("numba disabled in this environment")
    assert _kernels.BACKEND == "numba"
