"""Subprocess detector backend speaking a line-delimited JSON protocol.

Each request is one JSON line written to the child's stdin::

    {"patch_path": "...", "patch_width": 256, "patch_height": 256,
     "scale": 2.0, "request_id": "img_0001:17"}

and the child answers with one JSON document on a single stdout line::

    {"request_id": "img_0001:17",
     "detections": [{"class_id": 0, "bbox": [x0, y0, x1, y1], "score": 0.9}]}

Boxes are in patch-local pixels.  Children are long-lived; a pool of them
serves concurrent callers, one request at a time per child.
"""
from __future__ import annotations

import itertools
import json
import logging
import queue
import select
import shlex
import subprocess
import tempfile
import threading
import time
from pathlib import Path
from typing import Any, Sequence

from .detectors import Detection, DetectorError, PatchContext
from .geometry import BBox, FrameTransform
from .raster import GrayImage, write_image

log = logging.getLogger(__name__)


class AdapterLaunchError(DetectorError):
    pass


class ProtocolError(DetectorError):
    pass


class AdapterTimeout(DetectorError):
    pass


def parse_response(line: str | bytes, request_id: str) -> list[Detection]:
    """Validate one adapter response and turn it into patch-local detections."""
    try:
        doc = json.loads(line)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"response is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProtocolError("response must be a JSON object")
    if doc.get("request_id") != request_id:
        raise ProtocolError(f"request_id mismatch: sent {request_id!r}, got {doc.get('request_id')!r}")
    dets = doc.get("detections")
    if not isinstance(dets, list):
        raise ProtocolError("response field 'detections' must be a list")
    out = []
    for i, item in enumerate(dets):
        where = f"detections[{i}]"
        if not isinstance(item, dict):
            raise ProtocolError(f"{where} must be an object")
        cls = item.get("class_id")
        if not isinstance(cls, int) or isinstance(cls, bool) or cls < 0:
            raise ProtocolError(f"{where}.class_id must be a non-negative integer")
        score = item.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= score <= 1.0:
            raise ProtocolError(f"{where}.score {score!r} outside [0, 1]")
        bbox = item.get("bbox")
        if (not isinstance(bbox, list) or len(bbox) != 4
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox)):
            raise ProtocolError(f"{where}.bbox must be [x_min, y_min, x_max, y_max]")
        try:
            box = BBox(*(float(v) for v in bbox))
        except ValueError as exc:
            raise ProtocolError(f"{where}.bbox invalid: {exc}") from exc
        out.append(Detection(box, cls, float(score)))
    return out


class _Child:
    def __init__(self, argv: Sequence[str], cwd: str | None):
        try:
            self.proc = subprocess.Popen(
                list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, cwd=cwd, bufsize=0,
            )
        except OSError as exc:
            raise AdapterLaunchError(f"cannot launch adapter {argv!r}: {exc}") from exc
        self._buf = b""

    def alive(self) -> bool:
        return self.proc.poll() is None

    def request(self, payload: bytes, timeout: float) -> bytes:
        assert self.proc.stdin is not None and self.proc.stdout is not None
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterLaunchError(f"adapter exited (code {self.proc.poll()})") from exc
        fd = self.proc.stdout.fileno()
        deadline = None if timeout is None else time.monotonic() + timeout
        while b"\n" not in self._buf:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                raise AdapterTimeout(f"adapter did not answer within {timeout} s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise AdapterTimeout(f"adapter did not answer within {timeout} s")
            chunk = self.proc.stdout.read(65536)
            if not chunk:
                raise ProtocolError(f"adapter closed its output (exit code {self.proc.wait()})")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                if self.proc.stdin:
                    self.proc.stdin.close()
                self.proc.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()


class SubprocessDetector:
    """Backend that forwards patches to an external model process.

    A child that times out or violates the protocol is killed and replaced
    on the next request, so one bad answer does not poison the pool.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 30.0, pool_size: int = 1,
                 cwd: str | Path | None = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise AdapterLaunchError("empty adapter command")
        self.timeout = float(timeout)
        self.pool_size = max(1, int(pool_size))
        self.cwd = str(cwd) if cwd is not None else None
        self._idle: "queue.Queue[_Child | None]" = queue.Queue()
        for _ in range(self.pool_size):
            self._idle.put(None)  # spawned lazily
        self._counter = itertools.count()
        self._lock = threading.Lock()
        self._tmp = tempfile.TemporaryDirectory(prefix="sahiref-adapter-")
        self._children: list[_Child] = []

    def _spawn(self) -> _Child:
        child = _Child(self.argv, self.cwd)
        with self._lock:
            self._children.append(child)
        return child

    def _next_id(self, context: PatchContext) -> str:
        with self._lock:
            n = next(self._counter)
        return f"{context.image_id}:{n}"

    def detect(self, patch: GrayImage, transform: FrameTransform, context: PatchContext) -> list[Detection]:
        request_id = self._next_id(context)
        patch_path = Path(self._tmp.name) / f"patch_{request_id.replace(':', '_').replace('/', '_')}.pgm"
        write_image(patch, patch_path)
        request: dict[str, Any] = {
            "patch_path": str(patch_path),
            "patch_width": patch.width,
            "patch_height": patch.height,
            "scale": transform.scale,
            "request_id": request_id,
        }
        payload = (json.dumps(request, sort_keys=True) + "\n").encode()
        child = self._idle.get()
        try:
            if child is None or not child.alive():
                child = self._spawn()
            line = child.request(payload, self.timeout)
            return parse_response(line, request_id)
        except DetectorError:
            if child is not None:
                child.kill()
                child = None
            raise
        finally:
            self._idle.put(child)
            try:
                patch_path.unlink()
            except OSError:
                pass

    def close(self) -> None:
        with self._lock:
            children, self._children = self._children, []
        for child in children:
            child.close()
        self._tmp.cleanup()

    def __enter__(self) -> "SubprocessDetector":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"SubprocessDetector({self.argv!r}, pool_size={self.pool_size})"
