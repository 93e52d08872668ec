"""Manifests, prediction files, adjudication tables and dataset slicing.

All documents are JSON written canonically: sorted keys, two-space
indent, floats rounded to 6 decimals, trailing newline.  Saving a loaded
document reproduces the original bytes.
"""
from __future__ import annotations

import csv
import json
import numbers
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from . import geometry as geo
from .detectors import Detection, Provenance
from .geometry import BBox, FrameTransform
from .raster import GrayImage, extract_patch, read_image, write_image
from .tiling import EDGES, plan_slices

FORMAT_VERSION = "1.0"
FLOAT_DECIMALS = 6
VERDICTS = ("TP", "FP", "uncertain")
REVIEW_HEADER = ("image_id", "prediction_index", "verdict", "note")


class SchemaError(ValueError):
    """A document failed validation; the message starts with the field path."""


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def _canon(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, numbers.Integral):
        return int(obj)
    if isinstance(obj, numbers.Real):
        r = round(float(obj), FLOAT_DECIMALS)
        return 0.0 if r == 0 else r
    if isinstance(obj, Mapping):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_canonical(obj: Any) -> str:
    return json.dumps(_canon(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(obj: Any, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_canonical(obj), encoding="utf-8")


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"<root>: not valid JSON ({exc})") from exc


def _fmt_path(parts: Iterable[Any]) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _validate(doc: Any, schema: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise SchemaError(f"{_fmt_path(err.absolute_path)}: {err.message}")


_NUM = {"type": "number"}
_BBOX = {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}
_CLASS_TABLE = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["class_id", "name", "abbreviation"],
        "properties": {
            "class_id": {"type": "integer", "minimum": 0},
            "name": {"type": "string"},
            "abbreviation": {"type": "string"},
        },
    },
}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format_version", "classes", "images"],
    "properties": {
        "format_version": {"type": "string"},
        "classes": _CLASS_TABLE,
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "path", "width", "height", "annotations"],
                "properties": {
                    "image_id": {"type": "string", "minLength": 1},
                    "path": {"type": "string"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "annotations": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["class_id", "bbox"],
                            "properties": {"class_id": {"type": "integer"}, "bbox": _BBOX},
                        },
                    },
                    "source": {
                        "type": "object",
                        "required": ["image_id", "origin_x", "origin_y"],
                        "properties": {
                            "image_id": {"type": "string"},
                            "origin_x": {"type": "integer"},
                            "origin_y": {"type": "integer"},
                        },
                    },
                },
            },
        },
    },
}

_DETECTION = {
    "type": "object",
    "required": ["class_id", "bbox", "score", "provenance"],
    "properties": {
        "class_id": {"type": "integer"},
        "bbox": _BBOX,
        "score": {"type": "number", "minimum": 0, "maximum": 1},
        "provenance": {
            "type": "object",
            "required": ["mode", "slice_index", "refined", "edge_flags"],
            "properties": {
                "mode": {"enum": ["full", "sliced", "refinement"]},
                "slice_index": {"type": ["integer", "null"]},
                "refined": {"type": "boolean"},
                "edge_flags": {"type": "array", "items": {"enum": list(EDGES)}},
                "verdict": {"type": ["string", "null"]},
            },
        },
    },
}

PREDICTIONS_SCHEMA = {
    "type": "object",
    "required": ["format_version", "config", "classes", "images"],
    "properties": {
        "format_version": {"type": "string"},
        "config": {"type": "object"},
        "classes": _CLASS_TABLE,
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "detections"],
                "properties": {
                    "image_id": {"type": "string"},
                    "detections": {"type": "array", "items": _DETECTION},
                    "discarded": {"type": "array", "items": _DETECTION},
                    "error": {"type": ["string", "null"]},
                },
            },
        },
    },
}

ADJUDICATION_SCHEMA = {
    "type": "object",
    "required": ["format_version", "rows"],
    "properties": {
        "format_version": {"type": "string"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "prediction_index", "verdict"],
                "properties": {
                    "image_id": {"type": "string"},
                    "prediction_index": {"type": "integer", "minimum": 0},
                    "verdict": {"enum": list(VERDICTS)},
                    "note": {"type": "string"},
                },
            },
        },
    },
}


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassInfo:
    class_id: int
    name: str
    abbreviation: str


@dataclass(frozen=True)
class Annotation:
    class_id: int
    bbox: BBox


@dataclass(frozen=True)
class SliceSource:
    """Where a sliced image came from: parent image id and slice origin."""

    image_id: str
    origin_x: int
    origin_y: int


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    source: SliceSource | None = None


@dataclass
class DatasetManifest:
    classes: tuple[ClassInfo, ...]
    images: list[ImageRecord]
    format_version: str = FORMAT_VERSION
    # directory relative image paths are resolved against; not serialised
    root: Path | None = field(default=None, compare=False)

    def image(self, image_id: str) -> ImageRecord:
        for rec in self.images:
            if rec.image_id == image_id:
                return rec
        raise KeyError(image_id)

    def image_path(self, rec: ImageRecord) -> Path:
        p = Path(rec.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load_image(self, rec: ImageRecord) -> GrayImage:
        return read_image(self.image_path(rec))

    def truths_by_image(self) -> dict[str, list[tuple[int, BBox]]]:
        return {rec.image_id: [(a.class_id, a.bbox) for a in rec.annotations] for rec in self.images}

    def class_ids(self) -> list[int]:
        return sorted(c.class_id for c in self.classes)

    def class_name(self, class_id: int) -> str:
        for c in self.classes:
            if c.class_id == class_id:
                return c.abbreviation or c.name
        return str(class_id)


def _box_list(b: BBox) -> list[float]:
    return [float(v) for v in b.as_tuple()]


def _box_from(values: Sequence[float], where: str) -> BBox:
    try:
        return BBox(*(float(v) for v in values))
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def _classes_to_list(classes: Iterable[ClassInfo]) -> list[dict]:
    return [{"class_id": c.class_id, "name": c.name, "abbreviation": c.abbreviation}
            for c in sorted(classes, key=lambda c: c.class_id)]


def _classes_from(doc: list, where: str = "classes") -> tuple[ClassInfo, ...]:
    seen = set()
    out = []
    for i, c in enumerate(doc):
        if c["class_id"] in seen:
            raise SchemaError(f"{where}[{i}].class_id: duplicate class_id {c['class_id']}")
        seen.add(c["class_id"])
        out.append(ClassInfo(int(c["class_id"]), c["name"], c["abbreviation"]))
    return tuple(out)


def manifest_to_dict(m: DatasetManifest) -> dict:
    images = []
    for rec in m.images:
        entry: dict[str, Any] = {
            "image_id": rec.image_id,
            "path": rec.path,
            "width": rec.width,
            "height": rec.height,
            "annotations": [{"class_id": a.class_id, "bbox": _box_list(a.bbox)} for a in rec.annotations],
        }
        if rec.source is not None:
            entry["source"] = {"image_id": rec.source.image_id, "origin_x": rec.source.origin_x,
                               "origin_y": rec.source.origin_y}
        images.append(entry)
    return {"format_version": m.format_version, "classes": _classes_to_list(m.classes), "images": images}


def manifest_from_dict(doc: Any, root: Path | None = None) -> DatasetManifest:
    _validate(doc, MANIFEST_SCHEMA)
    classes = _classes_from(doc["classes"])
    known = {c.class_id for c in classes}
    images: list[ImageRecord] = []
    seen: set[str] = set()
    for i, entry in enumerate(doc["images"]):
        where = f"images[{i}]"
        iid = entry["image_id"]
        if iid in seen:
            raise SchemaError(f"{where}.image_id: duplicate image_id {iid!r}")
        seen.add(iid)
        w, h = entry["width"], entry["height"]
        anns = []
        for j, a in enumerate(entry["annotations"]):
            awhere = f"{where}.annotations[{j}]"
            if a["class_id"] not in known:
                raise SchemaError(f"{awhere}.class_id: unknown class_id {a['class_id']} in image {iid!r}")
            box = _box_from(a["bbox"], f"{awhere}.bbox")
            if not geo.contains(BBox(0, 0, w, h), box):
                raise SchemaError(f"{awhere}.bbox: box {box.as_tuple()} outside {w}x{h} image {iid!r}")
            anns.append(Annotation(int(a["class_id"]), box))
        src = entry.get("source")
        source = SliceSource(src["image_id"], src["origin_x"], src["origin_y"]) if src else None
        images.append(ImageRecord(iid, entry["path"], w, h, tuple(anns), source))
    return DatasetManifest(classes, images, doc["format_version"], root)


def save_manifest(m: DatasetManifest, path: str | Path) -> None:
    write_json(manifest_to_dict(m), path)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    return manifest_from_dict(_read_json(path), root=path.parent)


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------

@dataclass
class ImagePredictions:
    image_id: str
    detections: list[Detection]
    discarded: list[Detection] = field(default_factory=list)
    error: str | None = None


@dataclass
class PredictionFile:
    config: dict
    classes: tuple[ClassInfo, ...]
    images: list[ImagePredictions]
    format_version: str = FORMAT_VERSION

    def by_image(self) -> dict[str, list[Detection]]:
        return {p.image_id: list(p.detections) for p in self.images}

    def image_ids(self) -> list[str]:
        return [p.image_id for p in self.images]


def detection_to_dict(d: Detection) -> dict:
    p = d.provenance
    return {
        "class_id": d.class_id,
        "bbox": _box_list(d.bbox),
        "score": float(d.score),
        "provenance": {
            "mode": p.mode,
            "slice_index": p.slice_index,
            "refined": p.refined,
            "edge_flags": sorted(p.edge_flags),
            "verdict": p.verdict,
        },
    }


def detection_from_dict(doc: dict, where: str = "detection") -> Detection:
    p = doc["provenance"]
    try:
        prov = Provenance(p["mode"], p["slice_index"], p["refined"], frozenset(p["edge_flags"]), p.get("verdict"))
    except ValueError as exc:
        raise SchemaError(f"{where}.provenance: {exc}") from exc
    return Detection(_box_from(doc["bbox"], f"{where}.bbox"), int(doc["class_id"]), float(doc["score"]), prov)


def predictions_to_dict(pf: PredictionFile) -> dict:
    images = []
    for ip in pf.images:
        images.append({
            "image_id": ip.image_id,
            "detections": [detection_to_dict(d) for d in ip.detections],
            "discarded": [detection_to_dict(d) for d in ip.discarded],
            "error": ip.error,
        })
    return {"format_version": pf.format_version, "config": pf.config,
            "classes": _classes_to_list(pf.classes), "images": images}


def predictions_from_dict(doc: Any) -> PredictionFile:
    _validate(doc, PREDICTIONS_SCHEMA)
    classes = _classes_from(doc["classes"])
    known = {c.class_id for c in classes}
    images = []
    seen: set[str] = set()
    for i, entry in enumerate(doc["images"]):
        where = f"images[{i}]"
        if entry["image_id"] in seen:
            raise SchemaError(f"{where}.image_id: duplicate image_id {entry['image_id']!r}")
        seen.add(entry["image_id"])
        lists = {}
        for key in ("detections", "discarded"):
            dets = []
            for j, d in enumerate(entry.get(key, [])):
                dwhere = f"{where}.{key}[{j}]"
                if d["class_id"] not in known:
                    raise SchemaError(f"{dwhere}.class_id: unknown class_id {d['class_id']} "
                                      f"in image {entry['image_id']!r}")
                dets.append(detection_from_dict(d, dwhere))
            lists[key] = dets
        images.append(ImagePredictions(entry["image_id"], lists["detections"], lists["discarded"],
                                       entry.get("error")))
    return PredictionFile(doc["config"], classes, images, doc["format_version"])


def save_predictions(pf: PredictionFile, path: str | Path) -> None:
    write_json(predictions_to_dict(pf), path)


def load_predictions(path: str | Path) -> PredictionFile:
    return predictions_from_dict(_read_json(path))


# ---------------------------------------------------------------------------
# dataset slicing
# ---------------------------------------------------------------------------

def slice_dataset(manifest: DatasetManifest, slice_size: int, out_dir: str | Path,
                  overlap_ratio: float = 0.5, image_suffix: str = ".pgm") -> DatasetManifest:
    """Cut every image into a slice grid and keep slices holding whole defects.

    A slice is kept iff at least one annotation lies entirely inside it.
    Its annotations are exactly the fully contained ones, shifted to
    slice-local coordinates; partially visible ones are dropped.  Patches
    go to ``out_dir/images`` and the manifest to ``out_dir/manifest.json``.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for rec in manifest.images:
        if not rec.annotations:
            continue
        image = manifest.load_image(rec)
        if (image.width, image.height) != (rec.width, rec.height):
            raise ValueError(f"image {rec.image_id!r} is {image.width}x{image.height}, "
                             f"manifest says {rec.width}x{rec.height}")
        plan = plan_slices(rec.width, rec.height, slice_size, overlap_ratio)
        for region in plan:
            frame = region.bbox
            inside = [a for a in rec.annotations if geo.contains(frame, a.bbox)]
            if not inside:
                continue
            t = FrameTransform(region.origin_x, region.origin_y, 1.0)
            anns = tuple(Annotation(a.class_id, geo.to_local(t, a.bbox)) for a in inside)
            sid = f"{rec.image_id}__s{slice_size}_{region.index:04d}"
            rel = f"images/{sid}{image_suffix}"
            write_image(extract_patch(image, region), out_dir / rel)
            records.append(ImageRecord(sid, rel, region.width, region.height, anns,
                                       SliceSource(rec.image_id, region.origin_x, region.origin_y)))
    sliced = DatasetManifest(manifest.classes, records, manifest.format_version, out_dir)
    save_manifest(sliced, out_dir / "manifest.json")
    return sliced


# ---------------------------------------------------------------------------
# manual review
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdjudicationRow:
    image_id: str
    prediction_index: int
    verdict: str
    note: str = ""


@dataclass
class AdjudicationFile:
    rows: list[AdjudicationRow]
    format_version: str = FORMAT_VERSION

    def verdicts(self) -> dict[tuple[str, int], str]:
        return {(r.image_id, r.prediction_index): r.verdict for r in self.rows}

    def counts(self) -> dict[str, int]:
        out = {v: 0 for v in VERDICTS}
        for r in self.rows:
            out[r.verdict] += 1
        return out


class AdjudicationError(ValueError):
    pass


@dataclass
class ReviewBundle:
    table: Path
    crops: list[Path]


def _overlay_crop(image: GrayImage, box: BBox, margin: int) -> GrayImage:
    x0 = max(0, int(box.x_min) - margin)
    y0 = max(0, int(box.y_min) - margin)
    x1 = min(image.width, int(np.ceil(box.x_max)) + margin)
    y1 = min(image.height, int(np.ceil(box.y_max)) + margin)
    crop = np.array(image.pixels[y0:y1, x0:x1], copy=True)
    bx0 = min(max(int(box.x_min) - x0, 0), crop.shape[1] - 1)
    by0 = min(max(int(box.y_min) - y0, 0), crop.shape[0] - 1)
    bx1 = min(max(int(np.ceil(box.x_max)) - x0 - 1, bx0), crop.shape[1] - 1)
    by1 = min(max(int(np.ceil(box.y_max)) - y0 - 1, by0), crop.shape[0] - 1)
    ink = 255 if crop.mean() < 128 else 0
    crop[by0, bx0:bx1 + 1] = ink
    crop[by1, bx0:bx1 + 1] = ink
    crop[by0:by1 + 1, bx0] = ink
    crop[by0:by1 + 1, bx1] = ink
    return GrayImage(crop)


def export_review(predictions: PredictionFile, manifest: DatasetManifest, out_dir: str | Path,
                  margin: int = 16) -> ReviewBundle:
    """Write one overlay crop per prediction and a blank verdict table."""
    out_dir = Path(out_dir)
    crop_dir = out_dir / "crops"
    crop_dir.mkdir(parents=True, exist_ok=True)
    known = {rec.image_id: rec for rec in manifest.images}
    crops = []
    rows = []
    for ip in predictions.images:
        if ip.image_id not in known:
            raise AdjudicationError(f"prediction image {ip.image_id!r} not in manifest")
        if not ip.detections:
            continue
        image = manifest.load_image(known[ip.image_id])
        for k, det in enumerate(ip.detections):
            path = crop_dir / f"{ip.image_id}_{k:04d}.pgm"
            write_image(_overlay_crop(image, det.bbox, margin), path)
            crops.append(path)
            rows.append((ip.image_id, k, "", ""))
    table = out_dir / "review.csv"
    with table.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REVIEW_HEADER)
        writer.writerows(rows)
    return ReviewBundle(table, crops)


def _normalise_verdict(raw: str, where: str) -> str:
    v = raw.strip()
    for canonical in VERDICTS:
        if v.lower() == canonical.lower():
            return canonical
    raise AdjudicationError(f"{where}: verdict {raw!r} is not one of {', '.join(VERDICTS)}")


def validate_adjudication(adj: AdjudicationFile, predictions: PredictionFile) -> None:
    counts = {ip.image_id: len(ip.detections) for ip in predictions.images}
    seen = set()
    for i, row in enumerate(adj.rows):
        where = f"rows[{i}]"
        if row.image_id not in counts:
            raise AdjudicationError(f"{where}: unknown image {row.image_id!r}")
        if not 0 <= row.prediction_index < counts[row.image_id]:
            raise AdjudicationError(
                f"{where}: prediction_index {row.prediction_index} out of range for image "
                f"{row.image_id!r} with {counts[row.image_id]} predictions")
        key = (row.image_id, row.prediction_index)
        if key in seen:
            raise AdjudicationError(f"{where}: duplicate verdict for {key}")
        seen.add(key)


def import_adjudication(path: str | Path, predictions: PredictionFile | None = None) -> AdjudicationFile:
    """Read a filled-in review table (CSV) or adjudication JSON.

    With ``predictions`` given, every row must reference an existing
    prediction.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        rows = []
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REVIEW_HEADER:
                raise AdjudicationError(f"header must be {','.join(REVIEW_HEADER)}, got {reader.fieldnames}")
            for line_no, rec in enumerate(reader, start=2):
                where = f"line {line_no}"
                try:
                    idx = int(rec["prediction_index"])
                except (TypeError, ValueError) as exc:
                    raise AdjudicationError(f"{where}: bad prediction_index {rec['prediction_index']!r}") from exc
                rows.append(AdjudicationRow(rec["image_id"], idx,
                                            _normalise_verdict(rec["verdict"] or "", where), rec["note"] or ""))
        adj = AdjudicationFile(rows)
    else:
        doc = _read_json(path)
        _validate(doc, ADJUDICATION_SCHEMA)
        adj = AdjudicationFile([AdjudicationRow(r["image_id"], r["prediction_index"], r["verdict"], r.get("note", ""))
                                for r in doc["rows"]], doc["format_version"])
    if predictions is not None:
        validate_adjudication(adj, predictions)
    return adj


def save_adjudication(adj: AdjudicationFile, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REVIEW_HEADER)
            for r in adj.rows:
                writer.writerow((r.image_id, r.prediction_index, r.verdict, r.note))
        return
    write_json({"format_version": adj.format_version,
                "rows": [{"image_id": r.image_id, "prediction_index": r.prediction_index,
                          "verdict": r.verdict, "note": r.note} for r in adj.rows]}, path)
