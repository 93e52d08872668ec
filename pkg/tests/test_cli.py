import json
import sys

import pytest

from sahiref.cli import main

SYNTH = {"width": 256, "height": 256, "count": 3, "min_separation": 6,
         "defects": [{"class_id": 1, "count": 4, "size_range": [4, 5]}, {"class_id": 0, "count": 3}],
         "straddle": {"class_id": 0, "count": 1}}
ORACLE = {"kind": "oracle", "oracle": {"min_apparent_area": 48, "hallucination_band": [0.2, 0.5]}}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def dataset(tmp_path):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"synth": SYNTH, "seed": 4}))
    assert run("synth", "--config", cfg, "--out", tmp_path / "data") == 0
    return tmp_path / "data" / "manifest.json"


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("frobnicate") == 1
    assert run("infer", "--mode", "tiles") == 1
    assert run("infer", "--slice-size", "big") == 1
    assert run("infer", "--config", tmp_path / "missing.json", "--out", tmp_path) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"slice_sise": 128}))
    assert run("infer", "--config", bad, "--out", tmp_path) == 1
    assert "slice_sise" in capsys.readouterr().err
    assert run("infer", "--out", tmp_path) == 1  # no manifest
    assert run("infer", "--manifest", tmp_path / "nope.json", "--out", tmp_path) == 1
    bad.write_text(json.dumps({"confidence_threshold": 2}))
    assert run("infer", "--config", bad, "--out", tmp_path) == 1


def test_version_exits_zero(capsys):
    assert main(["--version"]) == 0
    assert "sahiref" in capsys.readouterr().out


def test_infeasible_synth_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"width": 32, "height": 32, "max_retries": 20,
                                         "defects": [{"class_id": 0, "count": 40}]}}))
    assert run("synth", "--config", cfg, "--out", tmp_path / "d") == 2
    assert "could not place" in capsys.readouterr().err


def test_full_flow(tmp_path, dataset):
    out = tmp_path / "runs"
    cfg = tmp_path / "infer.json"
    cfg.write_text(json.dumps({"manifest": str(dataset), "detector": ORACLE}))
    assert run("infer", "--config", cfg, "--mode", "full", "--out", out / "full") == 0
    assert run("infer", "--config", cfg, "--out", out / "sahi") == 0
    assert run("infer", "--config", cfg, "--refine", "--voting", "consensus", "--out", out / "ref") == 0
    full = json.loads((out / "full" / "predictions.json").read_text())
    sahi = json.loads((out / "sahi" / "predictions.json").read_text())
    ref = json.loads((out / "ref" / "predictions.json").read_text())
    n = lambda doc: sum(len(i["detections"]) for i in doc["images"])  # noqa: E731
    assert n(full) < n(sahi) and n(ref) < n(sahi)
    assert ref["config"]["refinement"]["voting_mode"] == "consensus"
    key = lambda d: (tuple(d["bbox"]), d["class_id"])  # noqa: E731
    for a, b in zip(ref["images"], sahi["images"]):
        assert {key(d) for d in a["detections"]} <= {key(d) for d in b["detections"]}

    # snapshot reproduces the run byte for byte
    snap = out / "ref" / "run_config.json"
    assert run("infer", "--config", snap) == 0
    rerun = json.loads((out / "ref" / "predictions.json").read_text())
    assert rerun == ref

    assert run("eval", "--predictions", out / "ref" / "predictions.json", "--gt", dataset,
               "--out", out / "eval") == 0
    header = (out / "eval" / "report.csv").read_text().splitlines()[0]
    assert header == "class,gt_source,tp,fp,precision,recall,ap50,ar50"
    assert (out / "eval" / "refinement.csv").exists()
    assert (out / "eval" / "report_pr_curve.csv").exists()

    assert run("eval", "--predictions", out / "sahi" / "predictions.json", "--gt", out / "sahi" / "predictions.json",
               "--out", out / "self") == 0
    report = json.loads((out / "self" / "report.json").read_text())
    for c in report["classes"]:
        assert c["fp"] == 0
        if c["total_gt"]:
            assert c["ap50"] == 1.0 and c["ar50"] == 1.0

    cmp_cfg = tmp_path / "cmp.json"
    cmp_cfg.write_text(json.dumps({"compare_gt": {
        "predictions": {"without_sahi": str(out / "full" / "predictions.json"),
                        "with_sahi": str(out / "sahi" / "predictions.json")},
        "sources": {"human": {"path": str(dataset)},
                    "model_without_sahi": {"path": str(out / "full" / "predictions.json")},
                    "model_with_sahi": {"path": str(out / "sahi" / "predictions.json")}}}}))
    assert run("compare-gt", "--config", cmp_cfg, "--out", out / "cmp") == 0
    rows = (out / "cmp" / "gt_swap.csv").read_text().splitlines()
    assert len(rows) == 1 + 6

    assert run("review-export", "--predictions", out / "full" / "predictions.json", "--manifest", dataset,
               "--out", out / "rev") == 0
    table = out / "rev" / "review" / "review.csv"
    lines = table.read_text().splitlines()
    filled = [lines[0]] + [l.replace(",,", ",TP,", 1) if i % 2 else l.replace(",,", ",FP,", 1)
                           for i, l in enumerate(lines[1:])]
    table.write_text("\n".join(filled) + "\n")
    assert run("review-import", "--predictions", out / "full" / "predictions.json", "--verdicts", table,
               "--out", out / "rev") == 0
    adj = json.loads((out / "rev" / "adjudication.json").read_text())
    assert len(adj["rows"]) == len(lines) - 1
    assert run("eval", "--predictions", out / "full" / "predictions.json", "--gt", out / "rev" / "adjudication.json",
               "--manifest", dataset, "--out", out / "adj") == 0
    adj_report = json.loads((out / "adj" / "report.json").read_text())
    assert adj_report["gt_source"] == "adjudication"
    assert sum(c["tp"] + c["fp"] for c in adj_report["classes"]) == len(lines) - 1


def test_review_import_rejects_bad_rows(tmp_path, dataset, capsys):
    assert run("infer", "--manifest", dataset, "--out", tmp_path / "p") == 0
    bad = tmp_path / "bad.csv"
    bad.write_text("image_id,prediction_index,verdict,note\nscene_0000,999,TP,\n")
    assert run("review-import", "--predictions", tmp_path / "p" / "predictions.json", "--verdicts", bad,
               "--out", tmp_path / "r") == 2
    assert "out of range" in capsys.readouterr().err


def test_slice_dataset_sizes(tmp_path, dataset):
    assert run("slice-dataset", "--manifest", dataset, "--sizes", "64,128,512", "--out", tmp_path / "sl") == 0
    for s in (64, 128, 512):
        assert (tmp_path / "sl" / f"s{s}" / "manifest.json").exists()


def test_adapter_failure_isolated_per_image(tmp_path, dataset, capsys):
    script = tmp_path / "flaky.py"
    script.write_text(
        "import json, sys\n"
        "for line in sys.stdin:\n"
        "    req = json.loads(line)\n"
        "    bad = req['request_id'].startswith('scene_0001')\n"
        "    score = 7 if bad else 0.9\n"
        "    sys.stdout.write(json.dumps({'request_id': req['request_id'], 'detections':"
        " [{'class_id': 0, 'bbox': [0, 0, 4, 4], 'score': score}]}) + '\\n')\n"
        "    sys.stdout.flush()\n")
    code = run("infer", "--manifest", dataset, "--mode", "full", "--detector", "adapter",
               "--adapter-cmd", f"{sys.executable} {script}", "--out", tmp_path / "o")
    assert code == 2
    doc = json.loads((tmp_path / "o" / "predictions.json").read_text())
    errors = {i["image_id"]: i["error"] for i in doc["images"]}
    assert errors["scene_0000"] is None and errors["scene_0002"] is None
    assert "outside" in errors["scene_0001"]
    assert "scene_0001" in capsys.readouterr().err


def test_adapter_without_command(tmp_path, dataset):
    assert run("infer", "--manifest", dataset, "--detector", "adapter", "--out", tmp_path / "o") == 1


def test_workers_do_not_change_bytes(tmp_path, dataset):
    base = ["infer", "--manifest", dataset, "--refine"]
    assert run(*base, "--workers", "1", "--out", tmp_path / "w1") == 0
    assert run(*base, "--workers", "3", "--out", tmp_path / "w3") == 0
    assert (tmp_path / "w1" / "predictions.json").read_bytes() == (tmp_path / "w3" / "predictions.json").read_bytes()


def test_module_entry_point(tmp_path):
    import subprocess

    res = subprocess.run([sys.executable, "-m", "sahiref", "infer", "--mode", "bogus"], capture_output=True)
    assert res.returncode == 1
