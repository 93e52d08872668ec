"""Detector abstraction, the deterministic oracle backend and frame remapping."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from . import geometry as geo
from .geometry import BBox, FrameTransform
from .raster import GrayImage, extract_patch, upscale
from .tiling import SliceRegion, edge_contact

MODES = ("full", "sliced", "refinement")


@dataclass(frozen=True)
class Provenance:
    mode: str = "sliced"
    slice_index: int | None = None
    refined: bool = False
    edge_flags: frozenset[str] = frozenset()
    verdict: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown provenance mode {self.mode!r}")
        if self.mode == "full" and self.slice_index is not None:
            raise ValueError("full-image detections carry no slice index")


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: int
    score: float
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def with_provenance(self, **changes) -> "Detection":
        return replace(self, provenance=replace(self.provenance, **changes))


@dataclass(frozen=True)
class PatchContext:
    """What a backend knows about the patch besides its pixels.

    ``region`` is the patch footprint in global pixels.
    """

    image_id: str
    region: BBox
    image_width: int
    image_height: int


@runtime_checkable
class DetectorBackend(Protocol):
    def detect(self, patch: GrayImage, transform: FrameTransform,
               context: PatchContext) -> list[Detection]:
        """Return patch-local detections; must be deterministic and stateless."""
        ...


class DetectorError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleConfig:
    """Rules for the ground-truth-driven mock detector.

    min_apparent_area
        Visible area times scale squared below which an object is missed.
    visibility_threshold
        Visible fraction needed for a genuine detection.
    hallucination_band
        ``(lo, hi)`` visible-fraction range that yields a clipped spurious
        fragment, or None to disable.
    fp_rate
        Expected number of random spurious boxes per patch.
    """

    min_apparent_area: float = 0.0
    visibility_threshold: float = 0.9
    hallucination_band: tuple[float, float] | None = None
    rng_seed: int = 0
    fp_rate: float = 0.0
    spurious_classes: tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        v = self.visibility_threshold
        if not 0.0 < v <= 1.0:
            raise ValueError(f"visibility_threshold must lie in (0, 1], got {v}")
        if self.min_apparent_area < 0 or self.fp_rate < 0:
            raise ValueError("min_apparent_area and fp_rate must be non-negative")
        if self.hallucination_band is not None:
            lo, hi = self.hallucination_band
            if not 0.0 <= lo < hi <= v:
                raise ValueError(f"hallucination band {self.hallucination_band} must satisfy 0 <= lo < hi <= {v}")
            object.__setattr__(self, "hallucination_band", (float(lo), float(hi)))
        object.__setattr__(self, "spurious_classes", tuple(int(c) for c in self.spurious_classes))


def oracle_score(visible_fraction: float) -> float:
    return 0.5 + 0.5 * visible_fraction


def _patch_rng(cfg: OracleConfig, region: BBox, scale: float) -> np.random.Generator:
    key = repr((cfg.rng_seed, region.as_tuple(), float(scale))).encode()
    return np.random.default_rng([cfg.rng_seed & 0xFFFFFFFF, zlib.crc32(key)])


def oracle_detect(scene_truth: Sequence[tuple[int, BBox]], region: BBox, transform: FrameTransform,
                  cfg: OracleConfig) -> list[Detection]:
    """Emit patch-local detections derived from ground truth.

    For each truth box with visible fraction ``f`` inside ``region``: a
    clipped detection scored ``0.5 + 0.5 f`` when ``f`` reaches the
    visibility threshold, the same clipped fragment when ``f`` falls in the
    hallucination band, nothing otherwise.  Objects whose visible area at
    the patch scale is below ``min_apparent_area`` are never seen.
    """
    scale = transform.scale
    out = []
    band = cfg.hallucination_band
    for class_id, truth in scene_truth:
        visible = geo.intersection(truth, region)
        if visible is None:
            continue
        f = geo.area(visible) / geo.area(truth)
        if geo.area(visible) * scale * scale < cfg.min_apparent_area:
            continue
        if f >= cfg.visibility_threshold or (band is not None and band[0] <= f < band[1]):
            out.append(Detection(geo.to_local(transform, visible), int(class_id), oracle_score(f)))
    if cfg.fp_rate > 0:
        rng = _patch_rng(cfg, region, scale)
        lw, lh = region.width * scale, region.height * scale
        for _ in range(int(rng.poisson(cfg.fp_rate))):
            w = min(float(rng.uniform(4.0, 24.0)), lw)
            h = min(float(rng.uniform(4.0, 24.0)), lh)
            x = float(rng.uniform(0.0, lw - w)) if lw > w else 0.0
            y = float(rng.uniform(0.0, lh - h)) if lh > h else 0.0
            cls = cfg.spurious_classes[int(rng.integers(len(cfg.spurious_classes)))]
            out.append(Detection(BBox(x, y, x + w, y + h), cls, float(rng.uniform(0.25, 1.0))))
    return out


class OracleDetector:
    """Backend that looks up ground truth by image id instead of reading pixels."""

    def __init__(self, truths: Mapping[str, Sequence[tuple[int, BBox]]], config: OracleConfig | None = None):
        self.truths = {k: list(v) for k, v in truths.items()}
        self.config = config or OracleConfig()

    def detect(self, patch: GrayImage, transform: FrameTransform, context: PatchContext) -> list[Detection]:
        return oracle_detect(self.truths.get(context.image_id, ()), context.region, transform, self.config)

    def __repr__(self) -> str:
        return f"OracleDetector({self.config!r})"


# ---------------------------------------------------------------------------
# remapping
# ---------------------------------------------------------------------------

def remap_to_global(detections: Sequence[Detection], transform: FrameTransform, image_width: int,
                    image_height: int, region: SliceRegion | None = None, mode: str = "sliced",
                    epsilon: float = 1.0) -> list[Detection]:
    """Move patch-local detections into the global frame.

    Boxes are clamped to the image; boxes that fall outside it entirely are
    dropped.  When ``region`` is given its index and the edge contacts of
    each box are recorded in the provenance.
    """
    out = []
    for det in detections:
        g = geo.clip(geo.to_global(transform, det.bbox), image_width, image_height)
        if g is None:
            continue
        if region is not None:
            prov = Provenance(mode=mode, slice_index=region.index,
                              edge_flags=edge_contact(region, g, epsilon) if mode == "sliced" else frozenset())
        else:
            prov = Provenance(mode=mode)
        out.append(Detection(g, det.class_id, det.score, prov))
    return out


def run_on_region(detector: DetectorBackend, image: GrayImage, image_id: str, region: SliceRegion,
                  mode: str = "sliced", epsilon: float = 1.0) -> list[Detection]:
    """Extract, upscale, detect and remap one region of ``image``."""
    patch = upscale(extract_patch(image, region), region.scale)
    transform = region.transform
    ctx = PatchContext(image_id, region.bbox, image.width, image.height)
    local = detector.detect(patch, transform, ctx)
    return remap_to_global(local, transform, image.width, image.height,
                           region=None if mode == "full" else region, mode=mode, epsilon=epsilon)
