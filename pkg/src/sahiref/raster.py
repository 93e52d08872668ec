"""8-bit grayscale image buffer, patch extraction and nearest-neighbour upscaling.

Binary PGM (P5, maxval 255) is handled natively.  8-bit grayscale PNG is
supported when Pillow is installed.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels

if TYPE_CHECKING:
    from .tiling import SliceRegion


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable row-major uint8 image; ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.dtype != np.uint8:
            raise ValueError(f"expected 2-D uint8 samples, got {arr.dtype} with shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        arr = np.array(arr, copy=True, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def blank(cls, width: int, height: int, value: int = 0) -> "GrayImage":
        return cls(np.full((height, width), value, dtype=np.uint8))


def extract_patch(img: GrayImage, region: "SliceRegion") -> GrayImage:
    x, y, w, h = region.origin_x, region.origin_y, region.width, region.height
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > img.width or y + h > img.height:
        raise ValueError(
            f"region ({x},{y},{w}x{h}) out of bounds for {img.width}x{img.height} image"
        )
    return GrayImage(img.pixels[y:y + h, x:x + w])


def scaled_size(dim: int, scale: float) -> int:
    # round half up; Python's round() is banker's rounding
    return max(1, int(math.floor(dim * scale + 0.5)))


def upscale(img: GrayImage, scale: float) -> GrayImage:
    """Nearest-neighbour resample to ``round(dim * scale)`` on each axis."""
    if not scale >= 1:
        raise ValueError(f"upscale factor must be >= 1, got {scale}")
    out_w = scaled_size(img.width, scale)
    out_h = scaled_size(img.height, scale)
    if out_w == img.width and out_h == img.height:
        return img
    return GrayImage(_kernels.upscale_nearest(img.pixels, out_h, out_w))


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

_PGM_HEADER = re.compile(rb"\AP5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def _read_pgm(data: bytes) -> GrayImage:
    m = _PGM_HEADER.match(data)
    if m is None:
        raise ImageFormatError("malformed file: bad PGM header")
    width, height, maxval = (int(g) for g in m.groups())
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise ImageFormatError("malformed file: bad PGM dimensions or maxval")
    if maxval > 255:
        raise ImageFormatError(f"unsupported bit depth: maxval {maxval}")
    body = data[m.end():]
    if len(body) < width * height:
        raise ImageFormatError(
            f"malformed file: expected {width * height} samples, found {len(body)}"
        )
    arr = np.frombuffer(body, dtype=np.uint8, count=width * height).reshape(height, width)
    return GrayImage(arr)


def _write_pgm(img: GrayImage, path: Path) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + img.pixels.tobytes())


def _read_png(path: Path) -> GrayImage:
    try:
        from PIL import Image, UnidentifiedImageError
    except ImportError as exc:  # pragma: no cover
        raise ImageFormatError("PNG support requires Pillow") from exc
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise ImageFormatError(f"unsupported bit depth: PNG mode {mode}")
            if mode != "L":
                raise ImageFormatError(f"unsupported PNG mode {mode}; expected 8-bit grayscale")
            arr = np.array(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"malformed file: {exc}") from exc
    return GrayImage(arr)


def _write_png(img: GrayImage, path: Path) -> None:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ImageFormatError("PNG support requires Pillow") from exc
    Image.fromarray(np.asarray(img.pixels), mode="L").save(path, format="PNG")


def read_image(path: str | Path) -> GrayImage:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        return _read_png(path)
    if suffix in (".pgm", ".pnm"):
        return _read_pgm(path.read_bytes())
    raise ImageFormatError(f"unsupported image format {suffix!r}")


def write_image(img: GrayImage, path: str | Path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    path.parent.mkdir(parents=True, exist_ok=True)
    if suffix == ".png":
        _write_png(img, path)
    elif suffix in (".pgm", ".pnm"):
        _write_pgm(img, path)
    else:
        raise ImageFormatError(f"unsupported image format {suffix!r}")
