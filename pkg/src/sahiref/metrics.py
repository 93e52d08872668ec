"""Detection matching, precision/recall, AP50/AR50 and report tables.

Precision and recall follow the cumulative definitions

    P = TP / (TP + FP)        R = TP / total ground truths

with P = 1 when nothing was predicted and R = 1 when there is nothing to
find.  AP is the area under the all-point interpolated precision/recall
curve; AR is the recall reached at the confidence threshold.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .datasets import AdjudicationFile, DatasetManifest, PredictionFile, write_json
from .detectors import Detection
from .geometry import BBox, boxes_to_array

REPORT_HEADER = ("class", "gt_source", "tp", "fp", "precision", "recall", "ap50", "ar50")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def precision_recall(cum_tp: int, cum_fp: int, total_gt: int) -> tuple[float, float]:
    if cum_tp < 0 or cum_fp < 0 or total_gt < 0:
        raise ValueError("counts must be non-negative")
    if cum_tp > total_gt:
        raise ValueError(f"TP count {cum_tp} exceeds ground-truth total {total_gt}")
    p = 1.0 if cum_tp + cum_fp == 0 else cum_tp / (cum_tp + cum_fp)
    r = 1.0 if total_gt == 0 else cum_tp / total_gt
    return p, r


def pr_curve(verdicts: Sequence[bool], total_gt: int) -> list[tuple[float, float]]:
    """(precision, recall) after each prediction of a descending-score sweep."""
    points = []
    tp = fp = 0
    for hit in verdicts:
        if hit:
            tp += 1
        else:
            fp += 1
        points.append(precision_recall(tp, fp, total_gt))
    return points


def interpolated_ap(verdicts: Sequence[bool], total_gt: int) -> float | None:
    """All-point interpolated AP; None when there is no ground truth."""
    if total_gt == 0:
        return None
    points = pr_curve(verdicts, total_gt)
    if not points:
        return 0.0
    prec = np.array([p for p, _ in points], dtype=np.float64)
    rec = np.array([r for _, r in points], dtype=np.float64)
    envelope = np.maximum.accumulate(prec[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], rec)))
    return float(np.sum(steps * envelope))


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def _as_truth(t: Any) -> tuple[int, BBox]:
    if isinstance(t, tuple):
        return int(t[0]), t[1]
    return int(t.class_id), t.bbox


def prediction_order(predictions: Sequence[Detection]) -> list[int]:
    def key(i: int):
        d = predictions[i]
        b = d.bbox
        return (-d.score, b.x_min, b.y_min, d.class_id, b.x_max, b.y_max, i)

    return sorted(range(len(predictions)), key=key)


@dataclass
class MatchSet:
    pairs: list[tuple[int, int, float]]
    unmatched_predictions: list[int]
    unmatched_truths: list[int]
    iou_threshold: float = 0.5

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_predictions)

    @property
    def fn(self) -> int:
        return len(self.unmatched_truths)

    def matched_truth(self) -> dict[int, int]:
        return {p: t for p, t, _ in self.pairs}


def match(predictions: Sequence[Detection], truths: Sequence[Any], iou_threshold: float = 0.5) -> MatchSet:
    """One-to-one greedy assignment of predictions to same-class truths.

    Predictions are visited by descending score; each takes the unmatched
    truth with the highest IoU at or above the threshold, ties going to the
    truth with the smaller (x_min, y_min).  Indices in the result refer to
    the input sequences.
    """
    truths = [_as_truth(t) for t in truths]
    order = prediction_order(predictions)
    if not predictions or not truths:
        return MatchSet([], sorted(range(len(predictions))), list(range(len(truths))), iou_threshold)
    pboxes = boxes_to_array(predictions[i].bbox for i in order)
    tboxes = boxes_to_array(b for _, b in truths)
    overlaps = _kernels.pairwise_overlap(pboxes, tboxes, _kernels.METRIC_IOU)
    pcls = np.array([predictions[i].class_id for i in order], dtype=np.int64)
    tcls = np.array([c for c, _ in truths], dtype=np.int64)
    trank = np.empty(len(truths), dtype=np.int64)
    trank[sorted(range(len(truths)), key=lambda t: (truths[t][1].x_min, truths[t][1].y_min,
                                                    truths[t][1].x_max, truths[t][1].y_max, t))] = \
        np.arange(len(truths))
    assigned = _kernels.greedy_match(overlaps, pcls, tcls, trank, iou_threshold)
    pairs = []
    unmatched_p = []
    for k, t in enumerate(assigned):
        if t >= 0:
            pairs.append((order[k], int(t), float(overlaps[k, t])))
        else:
            unmatched_p.append(order[k])
    taken = {t for _, t, _ in pairs}
    return MatchSet(sorted(pairs), sorted(unmatched_p), [t for t in range(len(truths)) if t not in taken],
                    iou_threshold)


def _scored_verdicts(predictions_by_image: Mapping[str, Sequence[Detection]],
                     truths_by_image: Mapping[str, Sequence[Any]], iou_threshold: float,
                     conf: float) -> tuple[dict[int, list[tuple[tuple, bool]]], dict[int, int]]:
    """Per-class (sort key, is_tp) lists and per-class ground-truth totals."""
    verdicts: dict[int, list[tuple[tuple, bool]]] = {}
    totals: dict[int, int] = {}
    for image_id in sorted(set(predictions_by_image) | set(truths_by_image)):
        truths = [_as_truth(t) for t in truths_by_image.get(image_id, ())]
        for c, _ in truths:
            totals[c] = totals.get(c, 0) + 1
        preds = [d for d in predictions_by_image.get(image_id, ()) if d.score >= conf]
        ms = match(preds, truths, iou_threshold)
        hit = ms.matched_truth()
        for i, d in enumerate(preds):
            b = d.bbox
            key = (-d.score, image_id, b.x_min, b.y_min, b.x_max, b.y_max)
            verdicts.setdefault(d.class_id, []).append((key, i in hit))
    for c in verdicts:
        verdicts[c].sort(key=lambda kv: kv[0])
    return verdicts, totals


def average_precision(predictions_by_image: Mapping[str, Sequence[Detection]],
                      truths_by_image: Mapping[str, Sequence[Any]], iou: float = 0.5,
                      conf: float = 0.0) -> dict[int, float | None]:
    """Per-class AP at the given IoU; classes without ground truth map to None."""
    verdicts, totals = _scored_verdicts(predictions_by_image, truths_by_image, iou, conf)
    classes = sorted(set(verdicts) | set(totals))
    return {c: interpolated_ap([v for _, v in verdicts.get(c, [])], totals.get(c, 0)) for c in classes}


def average_recall(predictions_by_image: Mapping[str, Sequence[Detection]],
                   truths_by_image: Mapping[str, Sequence[Any]], iou: float = 0.5,
                   conf: float = 0.25) -> dict[int, float | None]:
    """Per-class recall of the predictions scoring at least ``conf``."""
    verdicts, totals = _scored_verdicts(predictions_by_image, truths_by_image, iou, conf)
    out: dict[int, float | None] = {}
    for c in sorted(set(verdicts) | set(totals)):
        total = totals.get(c, 0)
        out[c] = None if total == 0 else sum(v for _, v in verdicts.get(c, [])) / total
    return out


def mean_defined(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def fp_reduction(fp_before: int, fp_after: int) -> float | None:
    """Fraction of false positives removed; None when there were none."""
    if fp_before == 0:
        return None
    return (fp_before - fp_after) / fp_before


# ---------------------------------------------------------------------------
# ground-truth sources and reports
# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    """A ground-truth source: annotation boxes or per-prediction verdicts.

    ``reference_totals`` gives per-class annotation totals used for recall
    when counts come from adjudication.
    """

    label: str
    truths: dict[str, list[tuple[int, BBox]]] | None = None
    adjudication: AdjudicationFile | None = None
    reference_totals: dict[int, int] | None = None

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, label: str = "human") -> "GroundTruth":
        return cls(label, truths=manifest.truths_by_image())

    @classmethod
    def from_predictions(cls, pf: PredictionFile | Mapping[str, Sequence[Detection]], label: str,
                         conf: float = 0.25) -> "GroundTruth":
        by_image = pf.by_image() if isinstance(pf, PredictionFile) else pf
        return cls(label, truths={k: [(d.class_id, d.bbox) for d in v if d.score >= conf]
                                  for k, v in by_image.items()})

    @classmethod
    def from_adjudication(cls, adj: AdjudicationFile, label: str = "adjudication",
                          manifest: DatasetManifest | None = None) -> "GroundTruth":
        totals = None
        if manifest is not None:
            totals = {}
            for rec in manifest.images:
                for a in rec.annotations:
                    totals[a.class_id] = totals.get(a.class_id, 0) + 1
        return cls(label, adjudication=adj, reference_totals=totals)

    def image_ids(self) -> set[str] | None:
        if self.truths is not None:
            return set(self.truths)
        return None


@dataclass
class ClassEval:
    class_id: int
    name: str
    tp: int
    fp: int
    total_gt: int | None
    precision: float
    recall: float | None
    ap50: float | None
    ar50: float | None
    uncertain: int = 0
    unreviewed: int = 0
    gt_undercount: bool = False
    pr_curve: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class EvalReport:
    gt_source: str
    iou_threshold: float
    conf_threshold: float
    classes: list[ClassEval]

    @property
    def map50(self) -> float | None:
        return mean_defined(c.ap50 for c in self.classes)

    @property
    def mar50(self) -> float | None:
        return mean_defined(c.ar50 for c in self.classes)

    def by_class(self) -> dict[int, ClassEval]:
        return {c.class_id: c for c in self.classes}

    def to_dict(self) -> dict:
        return {
            "gt_source": self.gt_source,
            "iou_threshold": self.iou_threshold,
            "conf_threshold": self.conf_threshold,
            "map50": self.map50,
            "mar50": self.mar50,
            "classes": [
                {
                    "class_id": c.class_id, "name": c.name, "tp": c.tp, "fp": c.fp, "total_gt": c.total_gt,
                    "precision": c.precision, "recall": c.recall, "ap50": c.ap50, "ar50": c.ar50,
                    "uncertain": c.uncertain, "unreviewed": c.unreviewed, "gt_undercount": c.gt_undercount,
                }
                for c in self.classes
            ],
        }


def _names(classes: Any) -> dict[int, str]:
    if classes is None:
        return {}
    return {c.class_id: (c.abbreviation or c.name) for c in classes}


def _check_images(pred_ids: set[str], gt: GroundTruth) -> None:
    gt_ids = gt.image_ids()
    if gt_ids is not None and gt_ids != pred_ids:
        missing = sorted(gt_ids ^ pred_ids)[:5]
        raise ValueError(f"prediction and ground-truth image sets differ (e.g. {missing})")


def tp_fp_report(predictions: PredictionFile | Mapping[str, Sequence[Detection]], gt: GroundTruth,
                 conf: float = 0.25, iou: float = 0.5, classes: Any = None) -> EvalReport:
    """Per-class TP/FP counts, precision/recall and AP50/AR50 against ``gt``.

    With an adjudication source the counts are the reviewers' verdicts on
    predictions scoring at least ``conf``; no geometric matching happens.
    """
    if isinstance(predictions, PredictionFile):
        classes = classes if classes is not None else predictions.classes
        by_image = predictions.by_image()
    else:
        by_image = {k: list(v) for k, v in predictions.items()}
    names = _names(classes)
    _check_images(set(by_image), gt)

    if gt.adjudication is not None:
        return _adjudicated_report(by_image, gt, conf, iou, names)

    verdicts, totals = _scored_verdicts(by_image, gt.truths or {}, iou, conf)
    class_ids = sorted(set(names) | set(verdicts) | set(totals))
    rows = []
    for c in class_ids:
        v = [hit for _, hit in verdicts.get(c, [])]
        total = totals.get(c, 0)
        tp = sum(v)
        fp = len(v) - tp
        p, r = precision_recall(tp, fp, total)
        rows.append(ClassEval(
            c, names.get(c, str(c)), tp, fp, total, p, r,
            interpolated_ap(v, total), None if total == 0 else r,
            pr_curve=pr_curve(v, total),
        ))
    return EvalReport(gt.label, iou, conf, rows)


def _adjudicated_report(by_image: Mapping[str, Sequence[Detection]], gt: GroundTruth, conf: float,
                        iou: float, names: dict[int, str]) -> EvalReport:
    verdicts = gt.adjudication.verdicts()
    counts: dict[int, dict[str, int]] = {}
    for image_id, dets in by_image.items():
        for k, d in enumerate(dets):
            if d.score < conf:
                continue
            slot = counts.setdefault(d.class_id, {"TP": 0, "FP": 0, "uncertain": 0, "unreviewed": 0})
            slot[verdicts.get((image_id, k), "unreviewed")] += 1
    totals = gt.reference_totals
    class_ids = sorted(set(names) | set(counts) | set(totals or {}))
    rows = []
    for c in class_ids:
        slot = counts.get(c, {"TP": 0, "FP": 0, "uncertain": 0, "unreviewed": 0})
        tp, fp = slot["TP"], slot["FP"]
        p = 1.0 if tp + fp == 0 else tp / (tp + fp)
        total = None if totals is None else totals.get(c, 0)
        recall: float | None = None
        undercount = False
        if total is not None:
            if tp > total:
                undercount = True
            else:
                recall = precision_recall(tp, fp, total)[1]
        rows.append(ClassEval(c, names.get(c, str(c)), tp, fp, total, p, recall, None, None,
                              slot["uncertain"], slot["unreviewed"], undercount))
    return EvalReport(gt.label, iou, conf, rows)


@dataclass
class SwapRow:
    mode: str
    source: str
    per_class: dict[int, tuple[float | None, float | None]]


def gt_swap_comparison(predictions_by_mode: Mapping[str, PredictionFile | Mapping[str, Sequence[Detection]]],
                       sources: Mapping[str, GroundTruth], conf: float = 0.25,
                       iou: float = 0.5) -> list[SwapRow]:
    """AP50/AR50 of every inference mode against every ground-truth source."""
    id_sets = [set(s.image_ids()) for s in sources.values() if s.image_ids() is not None]
    if any(ids != id_sets[0] for ids in id_sets[1:]):
        raise ValueError("ground-truth sources cover different image sets")
    rows = []
    for mode, preds in predictions_by_mode.items():
        for label, gt in sources.items():
            report = tp_fp_report(preds, gt, conf=conf, iou=iou)
            rows.append(SwapRow(mode, label, {c.class_id: (c.ap50, c.ar50) for c in report.classes}))
    return rows


def refinement_table(before: EvalReport, after: EvalReport) -> list[dict]:
    """FP reduction by refinement, per class."""
    b = before.by_class()
    rows = []
    for c in after.classes:
        prev = b.get(c.class_id)
        fp_before = prev.fp if prev else 0
        rows.append({
            "class": c.name, "tp_before": prev.tp if prev else 0, "fp_before": fp_before,
            "tp": c.tp, "fp": c.fp, "fp_reduction": fp_reduction(fp_before, c.fp), "total_gt": c.total_gt,
        })
    return rows


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def report_rows(report: EvalReport) -> list[tuple]:
    return [(c.name, report.gt_source, c.tp, c.fp, c.precision, c.recall, c.ap50, c.ar50)
            for c in report.classes]


def write_report(report: EvalReport, out_dir: str | Path, stem: str = "report") -> None:
    out_dir = Path(out_dir)
    write_json(report.to_dict(), out_dir / f"{stem}.json")
    _write_csv(out_dir / f"{stem}.csv", REPORT_HEADER, report_rows(report))
    pr_rows = []
    for c in report.classes:
        for rank, (p, r) in enumerate(c.pr_curve, start=1):
            pr_rows.append((c.name, report.gt_source, rank, p, r))
    _write_csv(out_dir / f"{stem}_pr_curve.csv", ("class", "gt_source", "rank", "precision", "recall"), pr_rows)


def write_refinement_table(rows: Sequence[dict], path: str | Path) -> None:
    header = ("class", "tp_before", "fp_before", "tp", "fp", "fp_reduction", "total_gt")
    _write_csv(Path(path), header, [[r[h] for h in header] for r in rows])


def write_swap_table(rows: Sequence[SwapRow], out_dir: str | Path, names: Mapping[int, str] | None = None) -> None:
    out_dir = Path(out_dir)
    names = dict(names or {})
    class_ids = sorted({c for r in rows for c in r.per_class})
    header = ["mode", "gt_source"]
    for c in class_ids:
        n = names.get(c, str(c))
        header += [f"{n}_ap50", f"{n}_ar50"]
    table = []
    for r in rows:
        line: list[Any] = [r.mode, r.source]
        for c in class_ids:
            line += list(r.per_class.get(c, (None, None)))
        table.append(line)
    _write_csv(out_dir / "gt_swap.csv", header, table)
    write_json({"rows": [{"mode": r.mode, "gt_source": r.source,
                          "classes": {names.get(c, str(c)): {"ap50": ap, "ar50": ar}
                                      for c, (ap, ar) in sorted(r.per_class.items())}}
                         for r in rows]}, out_dir / "gt_swap.json")
