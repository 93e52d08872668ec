"""Synthetic SEM-like scenes with ground-truth defect boxes.

Two backgrounds are available: periodic vertical lines (``line_space``) and
a hexagonal lattice of dark holes (``hex_array``).  Defects are rectangles
painted with a class-specific perturbation over the pattern, so every
ground-truth box encloses its perturbation exactly.  Placement can force
defects to straddle the boundary between two planned slices, which is what
produces clipped edge fragments during sliced inference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .datasets import Annotation, ClassInfo, DatasetManifest, ImageRecord, save_manifest
from .geometry import BBox
from .raster import GrayImage, write_image
from .tiling import axis_starts

PATTERNS = ("line_space", "hex_array")

# class tables: (class_id, name, abbreviation, default side range, paint style)
LINE_SPACE_CLASSES = (
    (0, "gap", "gap", (8, 12), "break"),
    (1, "probable gap", "pgap", (4, 5), "faint"),
    (2, "bridge", "bridge", (8, 14), "dark"),
    (3, "microbridge", "mb", (6, 8), "stripe"),
    (4, "line collapse", "lc", (12, 24), "dark"),
)
HEX_ARRAY_CLASSES = (
    (0, "missing hole", "mh", (6, 10), "break"),
    (1, "partially closed hole", "pch", (4, 5), "faint"),
    (2, "closed patch", "cp", (12, 24), "dark"),
)
_TABLES = {"line_space": LINE_SPACE_CLASSES, "hex_array": HEX_ARRAY_CLASSES}
# which class must be strictly smallest / largest in each pattern
_ORDERING = {"line_space": (1, 4), "hex_array": (None, 2)}

BRIGHT, DARK, FAINT = 200, 60, 140


class InfeasibleSpecError(RuntimeError):
    """Defects could not be packed within the retry budget."""


def class_table(pattern: str) -> tuple[ClassInfo, ...]:
    return tuple(ClassInfo(cid, name, abbr) for cid, name, abbr, _, _ in _TABLES[pattern])


def default_size_range(pattern: str, class_id: int) -> tuple[int, int]:
    for cid, _, _, rng, _ in _TABLES[pattern]:
        if cid == class_id:
            return rng
    raise ValueError(f"class {class_id} does not exist for pattern {pattern!r}")


def _paint_style(pattern: str, class_id: int) -> str:
    return next(style for cid, *_, style in _TABLES[pattern] if cid == class_id)


@dataclass(frozen=True)
class DefectSpec:
    class_id: int
    count: int
    # inclusive range of box side lengths, px
    min_size: int
    max_size: int

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError(f"defect count must be >= 0, got {self.count}")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError(f"size range must satisfy 1 <= min <= max, got ({self.min_size}, {self.max_size})")


@dataclass(frozen=True)
class StraddleSpec:
    """Defects deliberately cut by a planned slice boundary.

    ``visible_fraction`` bounds the share of each box that lies inside the
    slice it overhangs; the rest of the box sits in the overlap zone of the
    neighbouring slice, which therefore sees it whole.
    """

    class_id: int
    count: int
    slice_size: int = 128
    overlap_ratio: float = 0.1
    visible_fraction: tuple[float, float] = (0.25, 0.45)
    # keep the whole box this far from the neighbour's edge, px
    clearance: int = 2

    def __post_init__(self) -> None:
        lo, hi = self.visible_fraction
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"visible_fraction must satisfy 0 < lo <= hi < 1, got {self.visible_fraction}")
        if self.count < 0 or self.slice_size < 1:
            raise ValueError("straddle count must be >= 0 and slice_size >= 1")


@dataclass(frozen=True)
class SceneSpec:
    pattern: str = "line_space"
    width: int = 1024
    height: int = 1024
    pitch: int = 16
    feature_width: int = 8
    defects: tuple[DefectSpec, ...] = ()
    noise_amplitude: int = 10
    rng_seed: int = 0
    min_separation: int = 4
    straddle: StraddleSpec | None = None
    max_retries: int = 2000

    def __post_init__(self) -> None:
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0 < self.feature_width < self.pitch:
            raise ValueError(f"need 0 < feature_width < pitch, got {self.feature_width}, {self.pitch}")
        if not 0 <= self.noise_amplitude <= 255:
            raise ValueError(f"noise_amplitude must lie in [0, 255], got {self.noise_amplitude}")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")
        object.__setattr__(self, "defects", tuple(self.defects))
        known = {cid for cid, *_ in _TABLES[self.pattern]}
        for d in self.defects:
            if d.class_id not in known:
                raise ValueError(f"class {d.class_id} does not exist for pattern {self.pattern!r}")
            if d.max_size > min(self.width, self.height):
                raise ValueError(f"class {d.class_id} size {d.max_size} exceeds the image")
        if self.straddle is not None and self.straddle.class_id not in known:
            raise ValueError(f"straddle class {self.straddle.class_id} does not exist for {self.pattern!r}")
        self._check_size_order()

    def size_ranges(self) -> dict[int, tuple[int, int]]:
        out: dict[int, tuple[int, int]] = {}
        for d in self.defects:
            lo, hi = out.get(d.class_id, (d.min_size, d.max_size))
            out[d.class_id] = (min(lo, d.min_size), max(hi, d.max_size))
        if self.straddle is not None and self.straddle.class_id not in out:
            out[self.straddle.class_id] = default_size_range(self.pattern, self.straddle.class_id)
        return out

    def _check_size_order(self) -> None:
        ranges = self.size_ranges()
        smallest, largest = _ORDERING[self.pattern]
        if smallest in ranges:
            cap = ranges[smallest][1] ** 2
            for cid, (lo, _) in ranges.items():
                if cid != smallest and lo * lo <= cap:
                    raise ValueError(f"class {smallest} must be strictly smallest: its max area {cap} "
                                     f"reaches class {cid}'s min area {lo * lo}")
        if largest in ranges:
            top = ranges[largest][1]
            for cid, (_, hi) in ranges.items():
                if hi > top:
                    raise ValueError(f"class {largest} must be largest, but class {cid} allows side {hi} > {top}")


@dataclass(frozen=True)
class AnnotatedImage:
    image: GrayImage
    annotations: tuple[Annotation, ...]

    def record(self, image_id: str, path: str) -> ImageRecord:
        return ImageRecord(image_id, path, self.image.width, self.image.height, self.annotations)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _background(scene_cfg: SceneSpec) -> np.ndarray:
    h, w = scene_cfg.height, scene_cfg.width
    if scene_cfg.pattern == "line_space":
        cols = (np.arange(w) % scene_cfg.pitch) < scene_cfg.feature_width
        img = np.where(cols[None, :], DARK, BRIGHT).astype(np.int16)
        return np.broadcast_to(img, (h, w)).copy()
    # hexagonal hole lattice: rows pitch*sqrt(3)/2 apart, odd rows shifted half a pitch
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    row_h = scene_cfg.pitch * math.sqrt(3) / 2
    row = np.floor(yy / row_h + 0.5)
    cy = row * row_h
    shift = (row % 2) * scene_cfg.pitch / 2
    cx = np.floor((xx - shift) / scene_cfg.pitch + 0.5) * scene_cfg.pitch + shift
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    r = scene_cfg.feature_width / 2
    return np.where(d2 <= r * r, DARK, BRIGHT).astype(np.int16)


def _paint(canvas: np.ndarray, box: tuple[int, int, int, int], style: str) -> None:
    x0, y0, x1, y1 = box
    if style == "break":
        canvas[y0:y1, x0:x1] = BRIGHT + 30
    elif style == "faint":
        canvas[y0:y1, x0:x1] = FAINT
    elif style == "dark":
        canvas[y0:y1, x0:x1] = DARK - 30
    else:  # stripe: dark border with a lighter core
        canvas[y0:y1, x0:x1] = DARK - 30
        if x1 - x0 > 2 and y1 - y0 > 2:
            canvas[y0 + 1:y1 - 1, x0 + 1:x1 - 1] = FAINT


# ---------------------------------------------------------------------------
# placement
# ---------------------------------------------------------------------------

def _separated(box: tuple[int, int, int, int], placed: Sequence[tuple[int, int, int, int]], sep: int) -> bool:
    x0, y0, x1, y1 = box
    for a0, b0, a1, b1 in placed:
        dx = max(a0 - x1, x0 - a1)
        dy = max(b0 - y1, y0 - b1)
        if max(dx, dy) < sep:
            return False
    return True


def _cutting_edges(lo: int, hi: int, starts: Sequence[int], size: int, dim: int) -> set[int]:
    """Slice edges along one axis that fall strictly inside [lo, hi]."""
    return {e for s in starts for e in (s, min(s + size, dim)) if lo < e < hi}


def _straddle_box(rng: np.random.Generator, scene_cfg: SceneSpec, st: StraddleSpec) -> tuple[int, int, int, int] | None:
    lo_side, hi_side = default_size_range(scene_cfg.pattern, st.class_id)
    for d in scene_cfg.defects:
        if d.class_id == st.class_id:
            lo_side, hi_side = d.min_size, d.max_size
    w = int(rng.integers(lo_side, hi_side + 1))
    h = int(rng.integers(lo_side, hi_side + 1))
    vertical_cut = bool(rng.integers(2))
    # along the cut axis: box sticks `a` px into slice k past its far edge
    cut_len, other_len = (w, h) if vertical_cut else (h, w)
    cut_dim, other_dim = (scene_cfg.width, scene_cfg.height) if vertical_cut else (scene_cfg.height, scene_cfg.width)
    starts = axis_starts(cut_dim, st.slice_size, st.overlap_ratio)
    pairs = []
    for k in range(len(starts) - 1):
        end_k = starts[k] + st.slice_size
        overlap = end_k - starts[k + 1]
        a_lo = max(1, math.ceil(st.visible_fraction[0] * cut_len))
        a_hi = min(math.floor(st.visible_fraction[1] * cut_len), overlap - st.clearance)
        if a_lo <= a_hi and end_k - a_lo + cut_len <= starts[k + 1] + st.slice_size:
            pairs.append((k, a_lo, a_hi))
    if not pairs:
        return None
    k, a_lo, a_hi = pairs[int(rng.integers(len(pairs)))]
    a = int(rng.integers(a_lo, a_hi + 1))
    end_k = starts[k] + st.slice_size
    c0 = end_k - a
    if _cutting_edges(c0, c0 + cut_len, starts, st.slice_size, cut_dim) != {end_k}:
        return None
    other_starts = axis_starts(other_dim, st.slice_size, st.overlap_ratio)
    for _ in range(64):
        o0 = int(rng.integers(0, other_dim - other_len + 1))
        if not _cutting_edges(o0, o0 + other_len, other_starts, st.slice_size, other_dim):
            break
    else:
        return None
    if vertical_cut:
        return (c0, o0, c0 + w, o0 + h)
    return (o0, c0, o0 + w, c0 + h)


def _place(scene_cfg: SceneSpec, rng: np.random.Generator) -> list[tuple[int, tuple[int, int, int, int]]]:
    placed: list[tuple[int, tuple[int, int, int, int]]] = []
    boxes: list[tuple[int, int, int, int]] = []
    budget = scene_cfg.max_retries

    def _fail(what: str) -> InfeasibleSpecError:
        return InfeasibleSpecError(f"could not place {what} with separation {scene_cfg.min_separation} px "
                                   f"in a {scene_cfg.width}x{scene_cfg.height} image after {budget} attempts")

    if scene_cfg.straddle is not None:
        st = scene_cfg.straddle
        for n in range(st.count):
            for _ in range(budget):
                box = _straddle_box(rng, scene_cfg, st)
                if box is not None and _separated(box, boxes, scene_cfg.min_separation):
                    break
            else:
                raise _fail(f"straddling defect {n + 1} of {st.count}")
            placed.append((st.class_id, box))
            boxes.append(box)

    for d in scene_cfg.defects:
        for n in range(d.count):
            for _ in range(budget):
                w = int(rng.integers(d.min_size, d.max_size + 1))
                h = int(rng.integers(d.min_size, d.max_size + 1))
                x = int(rng.integers(0, scene_cfg.width - w + 1))
                y = int(rng.integers(0, scene_cfg.height - h + 1))
                box = (x, y, x + w, y + h)
                if _separated(box, boxes, scene_cfg.min_separation):
                    break
            else:
                raise _fail(f"defect {n + 1} of {d.count} for class {d.class_id}")
            placed.append((d.class_id, box))
            boxes.append(box)
    return placed


def generate_scene(scene_cfg: SceneSpec) -> AnnotatedImage:
    """Render one scene; identical scene configs give identical pixels and boxes."""
    rng = np.random.default_rng(scene_cfg.rng_seed)
    placed = _place(scene_cfg, rng)
    canvas = _background(scene_cfg)
    for class_id, box in placed:
        _paint(canvas, box, _paint_style(scene_cfg.pattern, class_id))
    if scene_cfg.noise_amplitude:
        a = scene_cfg.noise_amplitude
        canvas = canvas + rng.integers(-a, a + 1, size=canvas.shape, dtype=np.int16)
    pixels = np.clip(canvas, 0, 255).astype(np.uint8)
    order = sorted(placed, key=lambda cb: (cb[1][1], cb[1][0], cb[1][3], cb[1][2], cb[0]))
    anns = tuple(Annotation(c, BBox(*map(float, b))) for c, b in order)
    return AnnotatedImage(GrayImage(pixels), anns)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteSpec:
    scene: SceneSpec = field(default_factory=SceneSpec)
    count: int = 10
    base_seed: int = 0
    image_prefix: str = "scene"
    image_suffix: str = ".pgm"

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError(f"suite count must be >= 0, got {self.count}")

    def scene_spec(self, i: int) -> SceneSpec:
        return replace(self.scene, rng_seed=self.base_seed + i)

    def image_id(self, i: int) -> str:
        return f"{self.image_prefix}_{i:04d}"


def generate_suite(suite: SuiteSpec, out_dir: str | Path | None = None) -> DatasetManifest:
    """Generate ``suite.count`` scenes seeded ``base_seed + i``.

    With ``out_dir`` the rasters go to ``out_dir/images`` and the manifest
    to ``out_dir/manifest.json``.
    """
    classes = class_table(suite.scene.pattern)
    records = []
    root = Path(out_dir) if out_dir is not None else None
    for i in range(suite.count):
        scene = generate_scene(suite.scene_spec(i))
        iid = suite.image_id(i)
        rel = f"images/{iid}{suite.image_suffix}"
        if root is not None:
            write_image(scene.image, root / rel)
        records.append(scene.record(iid, rel))
    manifest = DatasetManifest(classes, records, root=root)
    if root is not None:
        save_manifest(manifest, root / "manifest.json")
    return manifest


def generate_suite_in_memory(suite: SuiteSpec) -> tuple[DatasetManifest, dict[str, GrayImage]]:
    """Like :func:`generate_suite` but keeps rasters in memory."""
    classes = class_table(suite.scene.pattern)
    records, images = [], {}
    for i in range(suite.count):
        scene = generate_scene(suite.scene_spec(i))
        iid = suite.image_id(i)
        records.append(scene.record(iid, f"images/{iid}{suite.image_suffix}"))
        images[iid] = scene.image
    return DatasetManifest(classes, records), images


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _defect_from(doc: Mapping[str, Any], pattern: str) -> DefectSpec:
    cid = int(doc["class_id"])
    lo, hi = doc.get("size_range") or default_size_range(pattern, cid)
    return DefectSpec(cid, int(doc["count"]), int(lo), int(hi))


def suite_from_dict(doc: Mapping[str, Any]) -> SuiteSpec:
    """Build a suite from its config-file form.

    Unknown keys raise ValueError so typos do not silently fall back to
    defaults.
    """
    allowed = {"pattern", "width", "height", "pitch", "feature_width", "defects", "noise_amplitude",
               "min_separation", "straddle", "count", "base_seed", "image_prefix", "image_suffix", "max_retries"}
    extra = set(doc) - allowed
    if extra:
        raise ValueError(f"synth: unknown keys {sorted(extra)}")
    pattern = doc.get("pattern", "line_space")
    straddle = None
    if doc.get("straddle"):
        s = dict(doc["straddle"])
        if "visible_fraction" in s:
            s["visible_fraction"] = tuple(s["visible_fraction"])
        straddle = StraddleSpec(**s)
    scene = SceneSpec(
        pattern=pattern,
        width=int(doc.get("width", 1024)),
        height=int(doc.get("height", 1024)),
        pitch=int(doc.get("pitch", 16)),
        feature_width=int(doc.get("feature_width", 8)),
        defects=tuple(_defect_from(d, pattern) for d in doc.get("defects", ())),
        noise_amplitude=int(doc.get("noise_amplitude", 10)),
        min_separation=int(doc.get("min_separation", 4)),
        straddle=straddle,
        max_retries=int(doc.get("max_retries", 2000)),
    )
    return SuiteSpec(scene, int(doc.get("count", 10)), int(doc.get("base_seed", 0)),
                     doc.get("image_prefix", "scene"), doc.get("image_suffix", ".pgm"))
