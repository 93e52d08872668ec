"""Command-line entry point: ``sahiref <subcommand> [--config run.json] [flags]``.

Every subcommand reads an optional JSON config whose keys mirror
:class:`RunConfig`; flags given on the command line override it.  Relative
paths in a config file resolve against the file's directory.  Each run
writes ``run_config.json`` next to its outputs, with paths rewritten
relative to that directory, so ``--config <out>/run_config.json``
repeats the run.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .adapter import SubprocessDetector
from .datasets import (
    PredictionFile, ImagePredictions, SchemaError, _read_json, _validate, export_review,
    import_adjudication, load_manifest, load_predictions, save_adjudication, save_predictions,
    slice_dataset, write_json,
)
from .detectors import DetectorBackend, OracleConfig, OracleDetector
from .fusion import MergeConfig
from .metrics import (
    GroundTruth, gt_swap_comparison, refinement_table, tp_fp_report, write_refinement_table, write_report,
    write_swap_table,
)
from .pipeline import InferenceSettings, infer_image
from .refinement import VOTING_MODES, RefinementConfig
from .synthgen import InfeasibleSpecError, generate_suite, suite_from_dict

log = logging.getLogger("sahiref")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SNAPSHOT = "run_config.json"


class ConfigError(ValueError):
    """Bad flags, config content or referenced input paths."""


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_PATH = {"type": ["string", "null"]}
_DETECTOR = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["oracle", "adapter"]},
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "min_apparent_area": {"type": "number", "minimum": 0},
                "visibility_threshold": {"type": "number"},
                "hallucination_band": {"type": ["array", "null"], "items": {"type": "number"},
                                       "minItems": 2, "maxItems": 2},
                "rng_seed": {"type": "integer"},
                "fp_rate": {"type": "number", "minimum": 0},
                "spurious_classes": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "truth_manifest": _PATH,
        "adapter_cmd": {"type": ["string", "null"]},
        "timeout": {"type": "number", "exclusiveMinimum": 0},
        "pool_size": {"type": "integer", "minimum": 1},
    },
}
_GT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["path"],
    "properties": {
        "kind": {"enum": ["manifest", "predictions", "adjudication"]},
        "path": {"type": "string"},
        "label": {"type": "string"},
        "manifest": _PATH,
    },
}
_RATIO = {"type": "number", "minimum": 0, "maximum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "workers": {"type": "integer", "minimum": 1},
        "out": _PATH,
        "manifest": _PATH,
        "predictions": _PATH,
        "detector": _DETECTOR,
        "mode": {"enum": ["full", "sahi"]},
        "slice_size": {"type": "integer", "minimum": 1},
        "overlap_ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "scale": {"type": "number", "minimum": 1},
        "confidence_threshold": _RATIO,
        "edge_epsilon": {"type": "number", "minimum": 0},
        "merge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "match_metric": {"enum": ["iou", "ios"]},
                "match_threshold": _RATIO,
                "class_agnostic": {"type": "boolean"},
            },
        },
        "refine": {"type": "boolean"},
        "refinement": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slice_size": {"type": ["integer", "null"], "minimum": 1},
                "scale": {"type": ["number", "null"], "minimum": 1},
                "iou_accept": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "voting_mode": {"enum": list(VOTING_MODES)},
                "margin_ratio": {"type": "number", "minimum": 0},
                "detectors": {"type": "array", "items": _DETECTOR},
            },
        },
        "iou_threshold": _RATIO,
        "gt": {"anyOf": [_GT, {"type": "null"}]},
        "compare_gt": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "predictions": {"type": "object", "additionalProperties": {"type": "string"}},
                "sources": {"type": "object", "additionalProperties": _GT},
            },
        },
        "synth": {"type": "object"},
        "slice_dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "overlap_ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "review": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "margin": {"type": "integer", "minimum": 0},
                "verdicts": _PATH,
            },
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "workers": 1,
    "out": None,
    "manifest": None,
    "predictions": None,
    "detector": {"kind": "oracle"},
    "mode": "sahi",
    "slice_size": 128,
    "overlap_ratio": 0.1,
    "scale": 2.0,
    "confidence_threshold": 0.25,
    "edge_epsilon": 1.0,
    "merge": {"match_metric": "iou", "match_threshold": 0.5, "class_agnostic": False},
    "refine": False,
    "refinement": {"slice_size": None, "scale": None, "iou_accept": 0.5, "voting_mode": "affirmative",
                   "margin_ratio": 0.25, "detectors": []},
    "iou_threshold": 0.5,
    "gt": None,
    "compare_gt": {"predictions": {}, "sources": {}},
    "synth": {},
    "slice_dataset": {"sizes": [128, 256, 512], "overlap_ratio": 0.5},
    "review": {"margin": 16, "verdicts": None},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("synth",):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path_fields(cfg: dict) -> list[tuple[Any, Any]]:
    """(container, key) pairs of every path-valued config entry."""
    refs: list[tuple[Any, Any]] = [(cfg, k) for k in ("out", "manifest", "predictions")]
    dets = [cfg["detector"], *cfg["refinement"].get("detectors", [])]
    refs += [(d, "truth_manifest") for d in dets]
    if cfg.get("gt"):
        refs += [(cfg["gt"], "path"), (cfg["gt"], "manifest")]
    for src in cfg["compare_gt"].get("sources", {}).values():
        refs += [(src, "path"), (src, "manifest")]
    refs += [(cfg["compare_gt"].get("predictions", {}), k) for k in cfg["compare_gt"].get("predictions", {})]
    refs.append((cfg["review"], "verdicts"))
    return refs


def _rebase_paths(cfg: dict, fn) -> None:
    for container, key in _path_fields(cfg):
        if container.get(key):
            container[key] = fn(container[key])


def load_config(path: str | Path | None) -> dict:
    """Read a run config, validate it and make its paths absolute."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    path = Path(path)
    try:
        doc = _read_json(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except SchemaError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        _validate(doc, CONFIG_SCHEMA)
    except SchemaError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = _deep_merge(DEFAULTS, doc)
    base = path.resolve().parent
    _rebase_paths(cfg, lambda p: str((base / p).resolve()) if not os.path.isabs(p) else p)
    return cfg


def snapshot(cfg: dict, out_dir: Path) -> None:
    """Write the effective config with paths relative to ``out_dir``.

    ``workers`` is left out: it changes scheduling only, never results, and
    keeping it would make otherwise identical runs differ byte-wise.
    """
    snap = copy.deepcopy(cfg)
    snap.pop("workers", None)
    out_abs = out_dir.resolve()
    _rebase_paths(snap, lambda p: os.path.relpath(p, out_abs))
    write_json(snap, out_dir / SNAPSHOT)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--workers", type=int, help="parallel images (default 1)")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sahiref", description="Slicing-aided defect detection, refinement and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    _common(p)

    p = sub.add_parser("slice-dataset", help="cut a dataset into slices holding whole defects")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--sizes", help="comma-separated slice sizes, e.g. 128,256,512")
    p.add_argument("--slice-overlap", type=float, dest="slice_overlap")

    p = sub.add_parser("infer", help="run full-image or sliced inference")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=["full", "sahi"])
    p.add_argument("--slice-size", type=int, dest="slice_size")
    p.add_argument("--overlap", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--conf", type=float)
    p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--voting", choices=list(VOTING_MODES))
    p.add_argument("--iou-accept", type=float, dest="iou_accept")
    p.add_argument("--detector", choices=["oracle", "adapter"])
    p.add_argument("--adapter-cmd", dest="adapter_cmd")

    p = sub.add_parser("eval", help="score predictions against a ground-truth source")
    _common(p)
    p.add_argument("--predictions")
    p.add_argument("--gt", help="manifest, prediction file or adjudication file")
    p.add_argument("--gt-kind", choices=["manifest", "predictions", "adjudication"], dest="gt_kind")
    p.add_argument("--gt-label", dest="gt_label")
    p.add_argument("--manifest", help="annotation totals for adjudicated recall")
    p.add_argument("--conf", type=float)
    p.add_argument("--iou", type=float)

    p = sub.add_parser("compare-gt", help="AP50/AR50 of each mode against each ground-truth source")
    _common(p)
    p.add_argument("--conf", type=float)
    p.add_argument("--iou", type=float)

    p = sub.add_parser("review-export", help="write crops and a blank verdict table")
    _common(p)
    p.add_argument("--predictions")
    p.add_argument("--manifest")
    p.add_argument("--margin", type=int)

    p = sub.add_parser("review-import", help="validate filled-in verdicts into an adjudication file")
    _common(p)
    p.add_argument("--predictions")
    p.add_argument("--verdicts", help="filled-in review CSV or adjudication JSON")
    return parser


def _cwd_path(p: str | None) -> str | None:
    return None if p is None else str(Path(p).resolve())


def apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    """Overlay command-line flags on a loaded config; flags win."""
    cfg = copy.deepcopy(cfg)
    get = lambda name: getattr(args, name, None)  # noqa: E731
    for key in ("workers", "seed"):
        if get(key) is not None:
            cfg[key] = get(key)
    for key in ("out", "manifest", "predictions"):
        if get(key) is not None:
            cfg[key] = _cwd_path(get(key))
    simple = {"mode": "mode", "slice_size": "slice_size", "overlap": "overlap_ratio", "scale": "scale",
              "conf": "confidence_threshold", "refine": "refine", "iou": "iou_threshold"}
    for flag, key in simple.items():
        if get(flag) is not None:
            cfg[key] = get(flag)
    if get("voting") is not None:
        cfg["refinement"]["voting_mode"] = get("voting")
    if get("iou_accept") is not None:
        cfg["refinement"]["iou_accept"] = get("iou_accept")
    if get("detector") is not None:
        cfg["detector"]["kind"] = get("detector")
    if get("adapter_cmd") is not None:
        cfg["detector"]["adapter_cmd"] = get("adapter_cmd")
    if get("gt") is not None:
        cfg["gt"] = {"path": _cwd_path(get("gt"))}
    if cfg.get("gt") and get("gt_kind") is not None:
        cfg["gt"]["kind"] = get("gt_kind")
    if cfg.get("gt") and get("gt_label") is not None:
        cfg["gt"]["label"] = get("gt_label")
    if args.command == "eval" and cfg.get("gt") and get("manifest") is not None:
        cfg["gt"]["manifest"] = _cwd_path(get("manifest"))
    if get("sizes") is not None:
        try:
            cfg["slice_dataset"]["sizes"] = [int(s) for s in get("sizes").split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"--sizes must be comma-separated integers, got {get('sizes')!r}") from exc
    if get("slice_overlap") is not None:
        cfg["slice_dataset"]["overlap_ratio"] = get("slice_overlap")
    if get("margin") is not None:
        cfg["review"]["margin"] = get("margin")
    if get("verdicts") is not None:
        cfg["review"]["verdicts"] = _cwd_path(get("verdicts"))
    try:
        _validate(cfg, CONFIG_SCHEMA)
    except SchemaError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _require(cfg: dict, key: str, flag: str) -> str:
    value = cfg.get(key)
    if not value:
        raise ConfigError(f"missing {key!r}: pass {flag} or set it in the config")
    if key != "out" and not Path(value).exists():
        raise ConfigError(f"{key} not found: {value}")
    return value


def _out_dir(cfg: dict) -> Path:
    out = Path(_require(cfg, "out", "--out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_manifest(path: str):
    try:
        return load_manifest(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"manifest not found: {path}") from exc


def _make_detector(entry: dict, cfg: dict, default_truths) -> DetectorBackend:
    kind = entry.get("kind", "oracle")
    if kind == "adapter":
        cmd = entry.get("adapter_cmd")
        if not cmd:
            raise ConfigError("detector kind 'adapter' needs --adapter-cmd or detector.adapter_cmd")
        return SubprocessDetector(cmd, timeout=entry.get("timeout", 30.0),
                                  pool_size=entry.get("pool_size", cfg["workers"]))
    params = dict(entry.get("oracle", {}))
    params.setdefault("rng_seed", cfg["seed"])
    if params.get("hallucination_band") is not None:
        params["hallucination_band"] = tuple(params["hallucination_band"])
    if "spurious_classes" in params:
        params["spurious_classes"] = tuple(params["spurious_classes"])
    try:
        oracle_cfg = OracleConfig(**params)
    except ValueError as exc:
        raise ConfigError(f"detector.oracle: {exc}") from exc
    truths = default_truths
    if entry.get("truth_manifest"):
        truths = _load_manifest(entry["truth_manifest"]).truths_by_image()
    return OracleDetector(truths, oracle_cfg)


def inference_settings(cfg: dict, detectors: Sequence[DetectorBackend] = ()) -> InferenceSettings:
    try:
        merge = MergeConfig(confidence_threshold=cfg["confidence_threshold"], **cfg["merge"])
        refinement = None
        if cfg["refine"] and cfg["mode"] == "sahi":
            r = cfg["refinement"]
            refinement = RefinementConfig(
                slice_size=r["slice_size"] or cfg["slice_size"],
                scale=r["scale"] or cfg["scale"],
                iou_accept=r["iou_accept"],
                voting_mode=r["voting_mode"],
                margin_ratio=r["margin_ratio"],
                detectors=tuple(detectors),
            )
        return InferenceSettings(mode=cfg["mode"], slice_size=cfg["slice_size"], overlap_ratio=cfg["overlap_ratio"],
                                 scale=cfg["scale"], merge=merge, refinement=refinement,
                                 edge_epsilon=cfg["edge_epsilon"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def settings_record(cfg: dict) -> dict:
    """Inference parameters stored inside a prediction file."""
    rec: dict[str, Any] = {"mode": cfg["mode"], "confidence_threshold": cfg["confidence_threshold"],
                           "seed": cfg["seed"], "detector": cfg["detector"].get("kind", "oracle")}
    if cfg["mode"] == "sahi":
        rec.update(slice_size=cfg["slice_size"], overlap_ratio=cfg["overlap_ratio"], scale=cfg["scale"],
                   merge=cfg["merge"], edge_epsilon=cfg["edge_epsilon"], refine=cfg["refine"])
        if cfg["refine"]:
            r = dict(cfg["refinement"])
            r["slice_size"] = r["slice_size"] or cfg["slice_size"]
            r["scale"] = r["scale"] or cfg["scale"]
            r["detectors"] = [d.get("kind", "oracle") for d in r.get("detectors", [])] or [rec["detector"]]
            rec["refinement"] = r
    return rec


def _sniff_gt_kind(path: str) -> str:
    if path.lower().endswith(".csv"):
        return "adjudication"
    doc = _read_json(path)
    if isinstance(doc, dict) and "rows" in doc:
        return "adjudication"
    if isinstance(doc, dict) and "config" in doc:
        return "predictions"
    return "manifest"


def load_gt(entry: dict, conf: float, default_label: str | None = None) -> GroundTruth:
    path = entry["path"]
    if not Path(path).exists():
        raise ConfigError(f"ground-truth source not found: {path}")
    kind = entry.get("kind") or _sniff_gt_kind(path)
    if kind == "manifest":
        return GroundTruth.from_manifest(_load_manifest(path), entry.get("label") or default_label or "human")
    if kind == "predictions":
        return GroundTruth.from_predictions(load_predictions(path), entry.get("label") or default_label or "model",
                                            conf=conf)
    manifest = _load_manifest(entry["manifest"]) if entry.get("manifest") else None
    return GroundTruth.from_adjudication(import_adjudication(path), entry.get("label") or "adjudication", manifest)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: dict) -> int:
    out = _out_dir(cfg)
    doc = dict(cfg["synth"])
    doc.setdefault("base_seed", cfg["seed"])
    try:
        suite = suite_from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}") from exc
    manifest = generate_suite(suite, out)
    snapshot(cfg, out)
    n = sum(len(r.annotations) for r in manifest.images)
    print(f"wrote {len(manifest.images)} images with {n} defects to {out / 'manifest.json'}")
    return EXIT_OK


def cmd_slice_dataset(cfg: dict) -> int:
    out = _out_dir(cfg)
    manifest = _load_manifest(_require(cfg, "manifest", "--manifest"))
    sd = cfg["slice_dataset"]
    if not sd["sizes"]:
        raise ConfigError("slice_dataset.sizes is empty")
    for size in sd["sizes"]:
        sliced = slice_dataset(manifest, size, out / f"s{size}", overlap_ratio=sd["overlap_ratio"])
        print(f"slice size {size}: {len(sliced.images)} slices")
    snapshot(cfg, out)
    return EXIT_OK


def run_inference(cfg: dict) -> PredictionFile:
    """Infer every manifest image; per-image failures are recorded, not raised."""
    manifest = _load_manifest(_require(cfg, "manifest", "--manifest"))
    truths = manifest.truths_by_image()
    detector = _make_detector(cfg["detector"], cfg, truths)
    extra = [_make_detector(d, cfg, truths) for d in cfg["refinement"].get("detectors", [])]
    settings = inference_settings(cfg, extra)

    def _one(rec) -> ImagePredictions:
        try:
            image = manifest.load_image(rec)
            res = infer_image(image, rec.image_id, detector, settings)
            return ImagePredictions(rec.image_id, res.detections, res.discarded)
        except Exception as exc:  # noqa: BLE001 - isolate failures per image
            log.error("image %s failed: %s", rec.image_id, exc)
            return ImagePredictions(rec.image_id, [], [], f"{type(exc).__name__}: {exc}")

    try:
        if cfg["workers"] > 1:
            with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
                results = list(pool.map(_one, manifest.images))
        else:
            results = [_one(rec) for rec in manifest.images]
    finally:
        for d in (detector, *extra):
            if hasattr(d, "close"):
                d.close()
    return PredictionFile(settings_record(cfg), manifest.classes, results)


def cmd_infer(cfg: dict) -> int:
    out = _out_dir(cfg)
    pf = run_inference(cfg)
    save_predictions(pf, out / "predictions.json")
    snapshot(cfg, out)
    failed = [ip for ip in pf.images if ip.error]
    total = sum(len(ip.detections) for ip in pf.images)
    print(f"{len(pf.images)} images, {total} detections -> {out / 'predictions.json'}")
    if failed:
        print(f"{len(failed)} image(s) failed:", file=sys.stderr)
        for ip in failed:
            print(f"  {ip.image_id}: {ip.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    out = _out_dir(cfg)
    pf = load_predictions(_require(cfg, "predictions", "--predictions"))
    if not cfg.get("gt"):
        raise ConfigError("missing ground truth: pass --gt or set gt.path in the config")
    gt = load_gt(cfg["gt"], cfg["confidence_threshold"])
    report = tp_fp_report(pf, gt, conf=cfg["confidence_threshold"], iou=cfg["iou_threshold"])
    write_report(report, out)
    if any(ip.discarded for ip in pf.images) and gt.adjudication is None:
        before = {ip.image_id: list(ip.detections) + list(ip.discarded) for ip in pf.images}
        before_report = tp_fp_report(before, gt, conf=cfg["confidence_threshold"], iou=cfg["iou_threshold"],
                                     classes=pf.classes)
        write_refinement_table(refinement_table(before_report, report), out / "refinement.csv")
    snapshot(cfg, out)
    for c in report.classes:
        print(f"{c.name:>8}  tp={c.tp:<5} fp={c.fp:<5} P={c.precision:.4f} "
              f"R={'n/a' if c.recall is None else f'{c.recall:.4f}'} "
              f"AP50={'n/a' if c.ap50 is None else f'{c.ap50:.4f}'}")
    return EXIT_OK


def cmd_compare_gt(cfg: dict) -> int:
    out = _out_dir(cfg)
    cg = cfg["compare_gt"]
    if not cg.get("predictions") or not cg.get("sources"):
        raise ConfigError("compare_gt needs 'predictions' (mode -> file) and 'sources' (label -> source)")
    preds = {}
    for mode, path in cg["predictions"].items():
        if not Path(path).exists():
            raise ConfigError(f"compare_gt.predictions.{mode} not found: {path}")
        preds[mode] = load_predictions(path)
    sources = {label: load_gt(entry, cfg["confidence_threshold"], label) for label, entry in cg["sources"].items()}
    rows = gt_swap_comparison(preds, sources, conf=cfg["confidence_threshold"], iou=cfg["iou_threshold"])
    names = {c.class_id: (c.abbreviation or c.name) for c in next(iter(preds.values())).classes}
    write_swap_table(rows, out, names)
    snapshot(cfg, out)
    print(f"{len(rows)} rows -> {out / 'gt_swap.csv'}")
    return EXIT_OK


def cmd_review_export(cfg: dict) -> int:
    out = _out_dir(cfg)
    pf = load_predictions(_require(cfg, "predictions", "--predictions"))
    manifest = _load_manifest(_require(cfg, "manifest", "--manifest"))
    bundle = export_review(pf, manifest, out / "review", margin=cfg["review"]["margin"])
    snapshot(cfg, out)
    print(f"{len(bundle.crops)} crops; fill in {bundle.table}")
    return EXIT_OK


def cmd_review_import(cfg: dict) -> int:
    out = _out_dir(cfg)
    pf = load_predictions(_require(cfg, "predictions", "--predictions"))
    verdicts = cfg["review"].get("verdicts")
    if not verdicts:
        raise ConfigError("missing verdicts: pass --verdicts or set review.verdicts")
    if not Path(verdicts).exists():
        raise ConfigError(f"verdicts not found: {verdicts}")
    adj = import_adjudication(verdicts, pf)
    save_adjudication(adj, out / "adjudication.json")
    snapshot(cfg, out)
    counts = adj.counts()
    print(", ".join(f"{k}={v}" for k, v in counts.items()) + f" -> {out / 'adjudication.json'}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "slice-dataset": cmd_slice_dataset,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "compare-gt": cmd_compare_gt,
    "review-export": cmd_review_export,
    "review-import": cmd_review_import,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_flags(load_config(args.config), args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"sahiref: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleSpecError as exc:
        print(f"sahiref: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("traceback", exc_info=True)
        print(f"sahiref: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
