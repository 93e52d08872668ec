import sys
import textwrap

import pytest

from sahiref.adapter import (AdapterLaunchError, AdapterTimeout, ProtocolError, SubprocessDetector,
                             parse_response)
from sahiref.detectors import run_on_region
from sahiref.geometry import BBox
from sahiref.raster import GrayImage
from sahiref.tiling import make_region

TEMPLATE = """
import json, sys, time
from pathlib import Path
for line in sys.stdin:
    req = json.loads(line)
    data = Path(req["patch_path"]).read_bytes()
    assert data.startswith(b"P5")
{body}
    sys.stdout.write(json.dumps(resp) + "\\n")
    sys.stdout.flush()
"""


def adapter(tmp_path, body, name="adapter.py"):
    script = tmp_path / name
    script.write_text(TEMPLATE.format(body=textwrap.indent(textwrap.dedent(body), "    ")))
    return [sys.executable, str(script)]


def _region(scale=2.0):
    return make_region(3, 100, 200, 64, 64, 512, 512, scale)


IMG = GrayImage.blank(512, 512, 128)


def test_empty_response(tmp_path):
    with SubprocessDetector(adapter(tmp_path, 'resp = {"request_id": req["request_id"], "detections": []}')) as det:
        assert run_on_region(det, IMG, "img", _region()) == []


def test_one_box_is_remapped(tmp_path):
    body = '''
    assert req["patch_width"] == 128 and req["scale"] == 2.0
    resp = {"request_id": req["request_id"],
            "detections": [{"class_id": 2, "bbox": [0, 0, 20, 10], "score": 0.8}]}
    '''
    with SubprocessDetector(adapter(tmp_path, body)) as det:
        (d,) = run_on_region(det, IMG, "img", _region())
    assert d.bbox == BBox(100, 200, 110, 205) and d.class_id == 2 and d.score == 0.8
    assert d.provenance.slice_index == 3


def test_child_is_reused(tmp_path):
    body = '''
    resp = {"request_id": req["request_id"], "detections": []}
    counter = globals().setdefault("n", [0]); counter[0] += 1
    if counter[0] > 1:
        resp["detections"] = [{"class_id": 0, "bbox": [1, 1, 2, 2], "score": 0.5}]
    '''
    with SubprocessDetector(adapter(tmp_path, body)) as det:
        assert run_on_region(det, IMG, "img", _region()) == []
        assert len(run_on_region(det, IMG, "img", _region())) == 1


@pytest.mark.parametrize("body,msg", [
    ('resp = {"request_id": req["request_id"], "detections": [{"class_id": 0, "bbox": [0,0,1,1], "score": 1.7}]}',
     "outside"),
    ('resp = {"request_id": "nope", "detections": []}', "request_id mismatch"),
    ('resp = {"request_id": req["request_id"], "detections": [{"class_id": 0, "bbox": [5,5,1,1], "score": 0.5}]}',
     "bbox invalid"),
    ('resp = {"request_id": req["request_id"]}', "must be a list"),
])
def test_protocol_violations(tmp_path, body, msg):
    with SubprocessDetector(adapter(tmp_path, body)) as det:
        with pytest.raises(ProtocolError, match=msg):
            run_on_region(det, IMG, "img", _region())


def test_timeout_then_recovery(tmp_path):
    marker = tmp_path / "slept"
    body = f'''
    if not Path({str(marker)!r}).exists():
        Path({str(marker)!r}).write_text("x")
        time.sleep(5)
    resp = {{"request_id": req["request_id"], "detections": []}}
    '''
    with SubprocessDetector(adapter(tmp_path, body), timeout=0.5) as det:
        with pytest.raises(AdapterTimeout):
            run_on_region(det, IMG, "img", _region())
        assert run_on_region(det, IMG, "img", _region()) == []


def test_crashing_adapter(tmp_path):
    with SubprocessDetector(adapter(tmp_path, "sys.exit(3)")) as det:
        with pytest.raises((ProtocolError, AdapterLaunchError)):
            run_on_region(det, IMG, "img", _region())


def test_missing_executable():
    with SubprocessDetector(["/nonexistent/adapter-binary"]) as det:
        with pytest.raises(AdapterLaunchError):
            run_on_region(det, IMG, "img", _region())
    with pytest.raises(AdapterLaunchError):
        SubprocessDetector("")


def test_parse_response_direct():
    assert parse_response(b'{"request_id": "a:1", "detections": []}', "a:1") == []
    with pytest.raises(ProtocolError, match="JSON"):
        parse_response("not json", "a:1")
    with pytest.raises(ProtocolError, match="class_id"):
        parse_response('{"request_id": "a:1", "detections": [{"class_id": true, "bbox": [0,0,1,1], "score": 1}]}',
                       "a:1")


def test_pool_serves_threads(tmp_path):
    from concurrent.futures import ThreadPoolExecutor

    body = '''
    resp = {"request_id": req["request_id"],
            "detections": [{"class_id": 0, "bbox": [0, 0, 4, 4], "score": 0.9}]}
    '''
    with SubprocessDetector(adapter(tmp_path, body), pool_size=3) as det:
        with ThreadPoolExecutor(4) as pool:
            results = list(pool.map(lambda _: run_on_region(det, IMG, "img", _region()), range(12)))
    assert all(len(r) == 1 for r in results)
