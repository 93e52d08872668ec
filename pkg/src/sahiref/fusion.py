"""Confidence thresholding and deterministic cross-slice NMS."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .detectors import Detection
from .geometry import boxes_to_array

METRICS = {"iou": _kernels.METRIC_IOU, "ios": _kernels.METRIC_IOS}


@dataclass(frozen=True)
class MergeConfig:
    confidence_threshold: float = 0.25
    match_metric: str = "iou"
    match_threshold: float = 0.5
    class_agnostic: bool = False

    def __post_init__(self) -> None:
        metric = self.match_metric.lower()
        if metric not in METRICS:
            raise ValueError(f"match_metric must be one of {sorted(METRICS)}, got {self.match_metric!r}")
        object.__setattr__(self, "match_metric", metric)
        for name in ("confidence_threshold", "match_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def threshold(detections: Iterable[Detection], confidence_threshold: float) -> list[Detection]:
    return [d for d in detections if d.score >= confidence_threshold]


def canonical_key(d: Detection) -> tuple:
    b = d.bbox
    p = d.provenance
    slice_index = -1 if p.slice_index is None else p.slice_index
    return (-d.score, b.x_min, b.y_min, d.class_id, b.x_max, b.y_max, slice_index,
            tuple(sorted(p.edge_flags)), p.mode)


def canonical_order(detections: Iterable[Detection]) -> list[Detection]:
    return sorted(detections, key=canonical_key)


def merge(detections: Sequence[Detection], cfg: MergeConfig = MergeConfig()) -> list[Detection]:
    """Greedy NMS over global-frame detections.

    Survivors keep their own geometry and score; their edge flags absorb
    the flags of every duplicate they suppress.  The result is in canonical
    order and does not depend on the input order.
    """
    ordered = canonical_order(detections)
    if not ordered:
        return []
    boxes = boxes_to_array(d.bbox for d in ordered)
    classes = np.array([d.class_id for d in ordered], dtype=np.int64)
    suppressor = _kernels.nms(boxes, classes, cfg.match_threshold, METRICS[cfg.match_metric],
                              cfg.class_agnostic)
    flags: dict[int, set[str]] = {}
    for j, i in enumerate(suppressor):
        if i >= 0:
            flags.setdefault(int(i), set()).update(ordered[j].provenance.edge_flags)
    out = []
    for i, d in enumerate(ordered):
        if suppressor[i] != -1:
            continue
        extra = flags.get(i)
        if extra and not extra <= d.provenance.edge_flags:
            d = d.with_provenance(edge_flags=frozenset(d.provenance.edge_flags | extra))
        out.append(d)
    return out
