"""Overlapping slice grids and slice-edge contact tests."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import BBox, FrameTransform

LEFT, TOP, RIGHT, BOTTOM = "left", "top", "right", "bottom"
EDGES = (LEFT, TOP, RIGHT, BOTTOM)


@dataclass(frozen=True)
class SliceRegion:
    index: int
    origin_x: int
    origin_y: int
    width: int
    height: int
    interior_edges: frozenset[str]
    scale: float = 1.0

    @property
    def bbox(self) -> BBox:
        return BBox(self.origin_x, self.origin_y, self.origin_x + self.width, self.origin_y + self.height)

    @property
    def transform(self) -> FrameTransform:
        return FrameTransform(float(self.origin_x), float(self.origin_y), self.scale)


@dataclass(frozen=True)
class SlicePlan:
    image_width: int
    image_height: int
    slice_size: int
    overlap_ratio: float
    regions: tuple[SliceRegion, ...]

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)


def slice_step(slice_size: int, overlap_ratio: float) -> int:
    # tiny bias keeps e.g. 100 * (1 - 0.7) from flooring to 29
    return max(1, int(math.floor(slice_size * (1.0 - overlap_ratio) + 1e-9)))


def axis_starts(dim: int, slice_size: int, overlap_ratio: float) -> list[int]:
    """Start offsets along one axis; the last start is shifted back, not shrunk."""
    if dim <= slice_size:
        return [0]
    step = slice_step(slice_size, overlap_ratio)
    last = dim - slice_size
    starts = list(range(0, last, step))
    starts.append(last)
    return starts


def interior_edges_for(x: int, y: int, w: int, h: int, image_w: int, image_h: int) -> frozenset[str]:
    edges = set()
    if x > 0:
        edges.add(LEFT)
    if y > 0:
        edges.add(TOP)
    if x + w < image_w:
        edges.add(RIGHT)
    if y + h < image_h:
        edges.add(BOTTOM)
    return frozenset(edges)


def make_region(index: int, x: int, y: int, w: int, h: int, image_w: int, image_h: int,
                scale: float = 1.0) -> SliceRegion:
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > image_w or y + h > image_h:
        raise ValueError(f"region ({x},{y},{w}x{h}) outside {image_w}x{image_h} image")
    return SliceRegion(index, x, y, w, h, interior_edges_for(x, y, w, h, image_w, image_h), scale)


def plan_slices(image_w: int, image_h: int, slice_size: int, overlap_ratio: float,
                scale: float = 1.0) -> SlicePlan:
    """Row-major grid of ``slice_size`` squares covering the whole image.

    Start positions advance by ``floor(slice_size * (1 - overlap_ratio))``;
    an axis shorter than the slice gets a single full-length span.
    """
    if image_w < 1 or image_h < 1:
        raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")
    if slice_size < 1:
        raise ValueError(f"slice_size must be >= 1, got {slice_size}")
    if not 0.0 <= overlap_ratio < 1.0:
        raise ValueError(f"overlap_ratio must lie in [0, 1), got {overlap_ratio}")
    xs = axis_starts(image_w, slice_size, overlap_ratio)
    ys = axis_starts(image_h, slice_size, overlap_ratio)
    w = min(slice_size, image_w)
    h = min(slice_size, image_h)
    regions = []
    for y in ys:
        for x in xs:
            regions.append(make_region(len(regions), x, y, w, h, image_w, image_h, scale))
    return SlicePlan(image_w, image_h, slice_size, overlap_ratio, tuple(regions))


def edge_contact(region: SliceRegion, box: BBox, epsilon: float = 1.0) -> frozenset[str]:
    """Interior slice edges that ``box`` starts or ends on, within ``epsilon`` px.

    Edges on the image border never count.
    """
    x0, y0 = region.origin_x, region.origin_y
    x1, y1 = x0 + region.width, y0 + region.height
    hits = set()
    edges = region.interior_edges
    if LEFT in edges and abs(box.x_min - x0) <= epsilon:
        hits.add(LEFT)
    if RIGHT in edges and abs(box.x_max - x1) <= epsilon:
        hits.add(RIGHT)
    if TOP in edges and abs(box.y_min - y0) <= epsilon:
        hits.add(TOP)
    if BOTTOM in edges and abs(box.y_max - y1) <= epsilon:
        hits.add(BOTTOM)
    return frozenset(hits)
