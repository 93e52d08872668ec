import numpy as np
import pytest

from sahiref import geometry as geo
from sahiref.detectors import OracleConfig, OracleDetector
from sahiref.pipeline import InferenceSettings, infer_image
from sahiref.synthgen import (DefectSpec, InfeasibleSpecError, SceneSpec, StraddleSpec, SuiteSpec,
                              generate_scene, generate_suite, suite_from_dict)
from sahiref.tiling import axis_starts


def test_clean_scene_is_periodic():
    scene = generate_scene(SceneSpec(width=64, height=32, noise_amplitude=0))
    assert scene.annotations == ()
    px = scene.image.pixels
    assert np.array_equal(px[:, :16], px[:, 16:32])
    assert (px == px[0]).all()


def test_hex_scene_renders():
    scene = generate_scene(SceneSpec(pattern="hex_array", width=96, height=96, noise_amplitude=0,
                                     defects=(DefectSpec(2, 3, 12, 16),)))
    assert len(scene.annotations) == 3
    assert len(np.unique(scene.image.pixels)) >= 3


def test_determinism():
    sc = SceneSpec(width=256, height=256, defects=(DefectSpec(0, 5, 8, 12), DefectSpec(1, 5, 4, 5)), rng_seed=3)
    a, b = generate_scene(sc), generate_scene(sc)
    assert a.image == b.image and a.annotations == b.annotations
    c = generate_scene(SceneSpec(**{**sc.__dict__, "rng_seed": 4}))
    assert c.annotations != a.annotations


def test_boxes_in_bounds_separated_and_tight():
    sc = SceneSpec(width=300, height=200, noise_amplitude=0, min_separation=6,
                     defects=(DefectSpec(0, 10, 8, 12), DefectSpec(4, 3, 14, 20), DefectSpec(1, 10, 4, 5)))
    scene = generate_scene(sc)
    boxes = [a.bbox for a in scene.annotations]
    for b in boxes:
        assert geo.contains(geo.BBox(0, 0, 300, 200), b)
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            gap = max(b.x_min - a.x_max, a.x_min - b.x_max, b.y_min - a.y_max, a.y_min - b.y_max)
            assert gap >= 6


def test_size_ordering_enforced():
    with pytest.raises(ValueError, match="strictly smallest"):
        SceneSpec(defects=(DefectSpec(1, 1, 4, 8), DefectSpec(0, 1, 8, 12)))
    with pytest.raises(ValueError, match="largest"):
        SceneSpec(defects=(DefectSpec(2, 1, 8, 30), DefectSpec(4, 1, 12, 24)))
    with pytest.raises(ValueError):
        SceneSpec(pattern="hex_array", defects=(DefectSpec(4, 1, 12, 24),))


def test_infeasible_packing():
    sc = SceneSpec(width=32, height=32, defects=(DefectSpec(0, 50, 10, 12),), max_retries=50)
    with pytest.raises(InfeasibleSpecError):
        generate_scene(sc)


def test_straddles_cross_planned_boundaries():
    sc = SceneSpec(straddle=StraddleSpec(0, 6), rng_seed=11, min_separation=8)
    scene = generate_scene(sc)
    starts = axis_starts(1024, 128, 0.1)
    edges = {s + 128 for s in starts[:-1]}
    assert len(scene.annotations) == 6
    for a in scene.annotations:
        b = a.bbox
        cut_x = [e for e in edges if b.x_min < e < b.x_max]
        cut_y = [e for e in edges if b.y_min < e < b.y_max]
        assert len(cut_x) + len(cut_y) == 1
        e = (cut_x or cut_y)[0]
        lo, hi = (b.x_min, b.x_max) if cut_x else (b.y_min, b.y_max)
        assert 0.25 <= (e - lo) / (hi - lo) <= 0.45


def test_scale_blindness_splits_classes():
    sc = SceneSpec(width=512, height=512, defects=(DefectSpec(1, 50, 4, 5), DefectSpec(0, 50, 8, 12)),
                     min_separation=4, rng_seed=2)
    scene = generate_scene(sc)
    det = OracleDetector({"s": [(a.class_id, a.bbox) for a in scene.annotations]},
                         OracleConfig(min_apparent_area=48))
    res = infer_image(scene.image, "s", det, InferenceSettings(mode="full"))
    assert {d.class_id for d in res.detections} == {0}
    assert len(res.detections) == 50


def test_suite_on_disk(tmp_path):
    suite = SuiteSpec(SceneSpec(width=128, height=128, defects=(DefectSpec(0, 2, 8, 12),)), count=3, base_seed=5)
    m = generate_suite(suite, tmp_path / "a")
    generate_suite(suite, tmp_path / "b")
    assert len(m.images) == 3
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    for rec in m.images:
        assert (tmp_path / "a" / rec.path).read_bytes() == (tmp_path / "b" / rec.path).read_bytes()
    assert m.images[1].annotations == generate_scene(suite.scene_spec(1)).annotations


def test_suite_from_dict():
    s = suite_from_dict({"count": 2, "width": 64, "height": 64, "defects": [{"class_id": 0, "count": 1}],
                         "straddle": {"class_id": 0, "count": 1, "slice_size": 32, "visible_fraction": [0.3, 0.4]}})
    assert s.scene.defects[0].min_size == 8 and s.scene.straddle.visible_fraction == (0.3, 0.4)
    with pytest.raises(ValueError, match="unknown keys"):
        suite_from_dict({"cout": 2})
