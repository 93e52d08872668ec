"""Re-verification of slice-edge predictions on freshly centred slices.

Every merged prediction that starts or ends on an interior slice edge gets
a new slice centred on its box.  The detector set runs on that slice and
each detector confirms the prediction when it re-detects the same class
with IoU >= ``iou_accept`` against the original box.  A vote over the
confirmations decides whether the original prediction survives.  Re-
detections are evidence only; they never enter the output.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Sequence

from . import geometry as geo
from .detectors import Detection, DetectorBackend, run_on_region
from .geometry import BBox
from .raster import GrayImage
from .tiling import SliceRegion, make_region

log = logging.getLogger(__name__)

VOTING_MODES = ("affirmative", "consensus", "unanimous")

KEPT = "kept"
DISCARDED = "discarded"
SKIPPED = "skipped_not_edge"
UNVERIFIABLE = "kept_unverifiable"


@dataclass(frozen=True)
class RefinementConfig:
    slice_size: int = 128
    scale: float = 2.0
    iou_accept: float = 0.5
    voting_mode: str = "affirmative"
    margin_ratio: float = 0.25
    detectors: tuple[DetectorBackend, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_accept <= 1.0:
            raise ValueError(f"iou_accept must lie in (0, 1], got {self.iou_accept}")
        if self.voting_mode not in VOTING_MODES:
            raise ValueError(f"voting_mode must be one of {VOTING_MODES}, got {self.voting_mode!r}")
        if self.slice_size < 1 or self.scale < 1 or self.margin_ratio < 0:
            raise ValueError("slice_size and scale must be >= 1 and margin_ratio >= 0")
        object.__setattr__(self, "detectors", tuple(self.detectors))


@dataclass(frozen=True)
class RefinementOutcome:
    original: Detection
    verdict: str
    confirmations: tuple[bool, ...] = ()
    best_iou: float | None = None
    region: SliceRegion | None = None


def vote(confirmations: Sequence[bool], mode: str) -> bool:
    yes = sum(bool(c) for c in confirmations)
    n = len(confirmations)
    if mode == "affirmative":
        return yes >= 1
    if mode == "consensus":
        return 2 * yes > n
    if mode == "unanimous":
        return n > 0 and yes == n
    raise ValueError(f"unknown voting mode {mode!r}")


def collect_edge_predictions(detections: Sequence[Detection]) -> list[int]:
    """Indices of predictions flagged as touching an interior slice edge."""
    return [i for i, d in enumerate(detections) if d.provenance.edge_flags]


def _axis_span(lo: float, hi: float, size: int, margin_ratio: float, dim: int) -> tuple[int, int]:
    extent = hi - lo
    if extent > size:
        size = int(math.ceil(extent * (1.0 + 2.0 * margin_ratio)))
    # the integer pixel span the box touches must fit
    size = max(size, int(math.ceil(hi)) - int(math.floor(lo)))
    if size >= dim:
        return 0, dim
    start = int(math.floor((lo + hi) / 2.0 - size / 2.0 + 0.5))
    start = min(start, int(math.floor(lo)))
    start = max(start, int(math.ceil(hi)) - size)
    start = min(max(start, 0), dim - size)
    return start, size


def build_refinement_slice(box: BBox, slice_size: int, image_width: int, image_height: int,
                           margin_ratio: float = 0.25, scale: float = 1.0, index: int = -1) -> SliceRegion:
    """Slice of ``slice_size`` centred on ``box``, shifted inside the image.

    An axis on which the box is larger than the slice grows to the box
    extent times ``1 + 2 * margin_ratio``.
    """
    x, w = _axis_span(box.x_min, box.x_max, slice_size, margin_ratio, image_width)
    y, h = _axis_span(box.y_min, box.y_max, slice_size, margin_ratio, image_height)
    return make_region(index, x, y, w, h, image_width, image_height, scale)


def verify(prediction: Detection, region: SliceRegion, image: GrayImage, image_id: str,
           cfg: RefinementConfig, detectors: Sequence[DetectorBackend] | None = None) -> RefinementOutcome:
    detectors = tuple(detectors if detectors is not None else cfg.detectors)
    if not detectors:
        raise ValueError("refinement needs at least one detector")
    confirmations = []
    best = 0.0
    for det in detectors:
        try:
            redetected = run_on_region(det, image, image_id, region, mode="refinement")
        except Exception as exc:  # noqa: BLE001 - fail open on any backend failure
            log.warning("refinement of %s in %s could not run (%s); keeping it", prediction.bbox, image_id, exc)
            return RefinementOutcome(prediction, UNVERIFIABLE, tuple(confirmations), None, region)
        ious = [geo.iou(r.bbox, prediction.bbox) for r in redetected if r.class_id == prediction.class_id]
        top = max(ious, default=0.0)
        best = max(best, top)
        confirmations.append(top >= cfg.iou_accept)
    verdict = KEPT if vote(confirmations, cfg.voting_mode) else DISCARDED
    return RefinementOutcome(prediction, verdict, tuple(confirmations), best, region)


def refine(detections: Sequence[Detection], image: GrayImage, image_id: str, cfg: RefinementConfig,
           executor: Executor | None = None) -> tuple[list[Detection], list[RefinementOutcome]]:
    """Keep or drop each edge prediction; everything else passes through.

    Returns the surviving detections (a subset of the input, in input
    order) and one outcome per input detection.
    """
    edge = set(collect_edge_predictions(detections))
    regions = {
        i: build_refinement_slice(detections[i].bbox, cfg.slice_size, image.width, image.height,
                                  cfg.margin_ratio, cfg.scale, index=i)
        for i in sorted(edge)
    }

    def _check(i: int) -> RefinementOutcome:
        return verify(detections[i], regions[i], image, image_id, cfg)

    order = sorted(edge)
    if executor is not None:
        checked = dict(zip(order, executor.map(_check, order)))
    else:
        checked = {i: _check(i) for i in order}

    final, outcomes = [], []
    for i, d in enumerate(detections):
        if i not in edge:
            outcomes.append(RefinementOutcome(d, SKIPPED))
            final.append(d)
            continue
        outcome = checked[i]
        outcomes.append(outcome)
        if outcome.verdict in (KEPT, UNVERIFIABLE):
            final.append(d.with_provenance(refined=True, verdict=outcome.verdict))
    return final, outcomes
