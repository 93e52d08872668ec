"""Full-image and sliced inference over one image."""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field, replace

from .detectors import Detection, DetectorBackend, run_on_region
from .fusion import MergeConfig, merge, threshold
from .raster import GrayImage
from .refinement import RefinementConfig, RefinementOutcome, refine
from .tiling import SliceRegion, make_region, plan_slices


@dataclass(frozen=True)
class InferenceSettings:
    mode: str = "sahi"
    slice_size: int = 128
    overlap_ratio: float = 0.1
    scale: float = 2.0
    merge: MergeConfig = field(default_factory=MergeConfig)
    refinement: RefinementConfig | None = None
    edge_epsilon: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("full", "sahi"):
            raise ValueError(f"mode must be 'full' or 'sahi', got {self.mode!r}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")


@dataclass
class ImageResult:
    image_id: str
    detections: list[Detection]
    # predictions dropped by refinement, kept for FP-reduction accounting
    discarded: list[Detection] = field(default_factory=list)
    outcomes: list[RefinementOutcome] = field(default_factory=list)


def infer_image(image: GrayImage, image_id: str, detector: DetectorBackend, settings: InferenceSettings,
                executor: Executor | None = None) -> ImageResult:
    """Run one detection pass and the configured postprocessing.

    ``full`` runs the detector once on the whole image at scale 1.  ``sahi``
    plans the slice grid, detects on every upscaled slice, remaps to the
    global frame, thresholds and merges, then optionally refines edge
    predictions.
    """
    if settings.mode == "full":
        region = make_region(0, 0, 0, image.width, image.height, image.width, image.height, 1.0)
        raw = run_on_region(detector, image, image_id, region, mode="full")
    else:
        plan = plan_slices(image.width, image.height, settings.slice_size, settings.overlap_ratio,
                           settings.scale)

        def _one(region: SliceRegion) -> list[Detection]:
            return run_on_region(detector, image, image_id, region, mode="sliced",
                                 epsilon=settings.edge_epsilon)

        per_slice = list(executor.map(_one, plan.regions)) if executor else [_one(r) for r in plan.regions]
        raw = [d for dets in per_slice for d in dets]

    merged = merge(threshold(raw, settings.merge.confidence_threshold), settings.merge)
    if settings.mode == "full" or settings.refinement is None:
        return ImageResult(image_id, merged)

    cfg = settings.refinement
    if not cfg.detectors:
        cfg = replace(cfg, detectors=(detector,))
    final, outcomes = refine(merged, image, image_id, cfg, executor=executor)
    discarded = [o.original.with_provenance(verdict=o.verdict) for o in outcomes if o.verdict == "discarded"]
    return ImageResult(image_id, final, discarded, outcomes)
