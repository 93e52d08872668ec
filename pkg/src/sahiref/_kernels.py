"""Hot numeric kernels with two interchangeable implementations.

Every kernel exists as a pure-numpy function and as a numba ``@njit``
loop.  The module-level names (``pairwise_overlap``, ``nms``,
``greedy_match``, ``upscale_nearest``) point at the numba versions unless
numba is missing or ``SAHIREF_DISABLE_NUMBA`` is set to a truthy value at
import time.

Box arrays are ``float64`` with shape ``(N, 4)`` laid out as
``x_min, y_min, x_max, y_max``.
"""
from __future__ import annotations

import os

import numpy as np

METRIC_IOU = 0
METRIC_IOS = 1

_DISABLE = os.environ.get("SAHIREF_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _pairwise_overlap_numpy(a, b, metric):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    if metric == METRIC_IOU:
        denom = area_a[:, None] + area_b[None, :] - inter
    else:
        denom = np.minimum(area_a[:, None], area_b[None, :])
    return inter / denom


def _nms_numpy(boxes, classes, threshold, metric, class_agnostic):
    n = boxes.shape[0]
    suppressor = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return suppressor
    overlaps = _pairwise_overlap_numpy(boxes, boxes, metric)
    same = np.ones((n, n), dtype=bool) if class_agnostic else classes[:, None] == classes[None, :]
    hits = (overlaps > threshold) & same
    for i in range(n):
        if suppressor[i] != -1:
            continue
        row = hits[i, i + 1:] & (suppressor[i + 1:] == -1)
        suppressor[i + 1:][row] = i
    return suppressor


def _greedy_match_numpy(overlaps, pred_classes, truth_classes, truth_rank, threshold):
    n_pred, n_truth = overlaps.shape
    assigned = np.full(n_pred, -1, dtype=np.int64)
    taken = np.zeros(n_truth, dtype=bool)
    for p in range(n_pred):
        ok = (~taken) & (truth_classes == pred_classes[p]) & (overlaps[p] >= threshold)
        if not ok.any():
            continue
        cand = np.flatnonzero(ok)
        vals = overlaps[p, cand]
        best = cand[vals == vals.max()]
        t = best[np.argmin(truth_rank[best])]
        assigned[p] = t
        taken[t] = True
    return assigned


def _upscale_nearest_numpy(pixels, out_h, out_w):
    h, w = pixels.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return pixels[rows[:, None], cols[None, :]]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _overlap_one(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1, metric):
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if metric == 0:
        return inter / (area_a + area_b - inter)
    return inter / min(area_a, area_b)


def _pairwise_overlap_loop(a, b, metric):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            out[i, j] = _overlap_one_jit(a[i, 0], a[i, 1], a[i, 2], a[i, 3],
                                         b[j, 0], b[j, 1], b[j, 2], b[j, 3], metric)
    return out


def _nms_loop(boxes, classes, threshold, metric, class_agnostic):
    n = boxes.shape[0]
    suppressor = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if suppressor[i] != -1:
            continue
        for j in range(i + 1, n):
            if suppressor[j] != -1:
                continue
            if not class_agnostic and classes[i] != classes[j]:
                continue
            ov = _overlap_one_jit(boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                                  boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3], metric)
            if ov > threshold:
                suppressor[j] = i
    return suppressor


def _greedy_match_loop(overlaps, pred_classes, truth_classes, truth_rank, threshold):
    n_pred, n_truth = overlaps.shape
    assigned = np.full(n_pred, -1, dtype=np.int64)
    taken = np.zeros(n_truth, dtype=np.bool_)
    for p in range(n_pred):
        best = -1
        best_val = -1.0
        for t in range(n_truth):
            if taken[t] or truth_classes[t] != pred_classes[p]:
                continue
            v = overlaps[p, t]
            if v < threshold:
                continue
            if v > best_val or (v == best_val and truth_rank[t] < truth_rank[best]):
                best = t
                best_val = v
        if best >= 0:
            assigned[p] = best
            taken[best] = True
    return assigned


def _upscale_nearest_loop(pixels, out_h, out_w):
    h, w = pixels.shape
    out = np.empty((out_h, out_w), dtype=pixels.dtype)
    for i in range(out_h):
        r = min(int((i + 0.5) * h / out_h), h - 1)
        for j in range(out_w):
            c = min(int((j + 0.5) * w / out_w), w - 1)
            out[i, j] = pixels[r, c]
    return out


if HAVE_NUMBA:
    _overlap_one_jit = njit(cache=True)(_overlap_one)
    _pairwise_overlap_numba = njit(cache=True)(_pairwise_overlap_loop)
    _nms_numba_jit = njit(cache=True)(_nms_loop)
    _greedy_match_numba = njit(cache=True)(_greedy_match_loop)
    _upscale_nearest_numba = njit(cache=True)(_upscale_nearest_loop)
else:  # pragma: no cover
    _overlap_one_jit = _overlap_one
    _pairwise_overlap_numba = _pairwise_overlap_loop
    _nms_numba_jit = _nms_loop
    _greedy_match_numba = _greedy_match_loop
    _upscale_nearest_numba = _upscale_nearest_loop


def _as_boxes(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))


def _nms_numba(boxes, classes, threshold, metric, class_agnostic):
    return _nms_numba_jit(_as_boxes(boxes), np.ascontiguousarray(classes, dtype=np.int64),
                          float(threshold), int(metric), bool(class_agnostic))


def _pairwise_overlap_numba_wrapped(a, b, metric):
    return _pairwise_overlap_numba(_as_boxes(a), _as_boxes(b), int(metric))


def _greedy_match_numba_wrapped(overlaps, pred_classes, truth_classes, truth_rank, threshold):
    return _greedy_match_numba(
        np.ascontiguousarray(overlaps, dtype=np.float64),
        np.ascontiguousarray(pred_classes, dtype=np.int64),
        np.ascontiguousarray(truth_classes, dtype=np.int64),
        np.ascontiguousarray(truth_rank, dtype=np.int64),
        float(threshold),
    )


def _upscale_nearest_numba_wrapped(pixels, out_h, out_w):
    return _upscale_nearest_numba(np.ascontiguousarray(pixels), int(out_h), int(out_w))


def _nms_numpy_wrapped(boxes, classes, threshold, metric, class_agnostic):
    return _nms_numpy(_as_boxes(boxes), np.asarray(classes, dtype=np.int64), threshold, metric, class_agnostic)


def _greedy_match_numpy_wrapped(overlaps, pred_classes, truth_classes, truth_rank, threshold):
    return _greedy_match_numpy(
        np.asarray(overlaps, dtype=np.float64),
        np.asarray(pred_classes, dtype=np.int64),
        np.asarray(truth_classes, dtype=np.int64),
        np.asarray(truth_rank, dtype=np.int64),
        threshold,
    )


IMPLEMENTATIONS = {
    "numpy": {
        "pairwise_overlap": _pairwise_overlap_numpy,
        "nms": _nms_numpy_wrapped,
        "greedy_match": _greedy_match_numpy_wrapped,
        "upscale_nearest": _upscale_nearest_numpy,
    },
    "numba": {
        "pairwise_overlap": _pairwise_overlap_numba_wrapped,
        "nms": _nms_numba,
        "greedy_match": _greedy_match_numba_wrapped,
        "upscale_nearest": _upscale_nearest_numba_wrapped,
    },
}

BACKEND = "numba" if (HAVE_NUMBA and not _DISABLE) else "numpy"

pairwise_overlap = IMPLEMENTATIONS[BACKEND]["pairwise_overlap"]
nms = IMPLEMENTATIONS[BACKEND]["nms"]
greedy_match = IMPLEMENTATIONS[BACKEND]["greedy_match"]
upscale_nearest = IMPLEMENTATIONS[BACKEND]["upscale_nearest"]
