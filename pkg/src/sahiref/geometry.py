"""Axis-aligned box arithmetic and slice/global frame transforms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, slots=True)
class BBox:
    """Closed axis-aligned rectangle in pixel coordinates.

    Degenerate boxes (zero width or height) and non-finite coordinates are
    rejected, since every downstream metric divides by area.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True, slots=True)
class FrameTransform:
    """Maps slice-local (scaled) pixels to the global image frame.

    ``scale`` is local pixels per global pixel, so a patch upscaled by 2
    has ``scale=2.0``.
    """

    origin_x: float
    origin_y: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive, got {self.scale}")


IDENTITY = FrameTransform(0.0, 0.0, 1.0)


def area(b: BBox) -> float:
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def intersection(a: BBox, b: BBox) -> BBox | None:
    """Overlap rectangle of ``a`` and ``b``; None when interiors are disjoint."""
    x0, y0 = max(a.x_min, b.x_min), max(a.y_min, b.y_min)
    x1, y1 = min(a.x_max, b.x_max), min(a.y_max, b.y_max)
    if x0 >= x1 or y0 >= y1:
        return None
    return BBox(x0, y0, x1, y1)


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def ios(a: BBox, b: BBox) -> float:
    """Intersection over the smaller of the two areas."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / min(area(a), area(b))


def contains(outer: BBox, inner: BBox) -> bool:
    # boundary-inclusive on purpose: an exact touch still counts as contained
    return (outer.x_min <= inner.x_min and outer.y_min <= inner.y_min
            and inner.x_max <= outer.x_max and inner.y_max <= outer.y_max)


def to_global(t: FrameTransform, local: BBox) -> BBox:
    s = t.scale
    return BBox(local.x_min / s + t.origin_x, local.y_min / s + t.origin_y,
                local.x_max / s + t.origin_x, local.y_max / s + t.origin_y)


def to_local(t: FrameTransform, glob: BBox) -> BBox:
    s = t.scale
    return BBox((glob.x_min - t.origin_x) * s, (glob.y_min - t.origin_y) * s,
                (glob.x_max - t.origin_x) * s, (glob.y_max - t.origin_y) * s)


def clip(b: BBox, width: float, height: float) -> BBox | None:
    """Clip ``b`` to the image rectangle ``[0, width] x [0, height]``."""
    return intersection(b, BBox(0.0, 0.0, float(width), float(height)))


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def array_to_boxes(arr: np.ndarray) -> list[BBox]:
    return [BBox(*map(float, row)) for row in np.asarray(arr).reshape(-1, 4)]


def pairwise_iou(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    from . import _kernels

    return _kernels.pairwise_overlap(boxes_to_array(a), boxes_to_array(b), _kernels.METRIC_IOU)
