import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sahiref.raster import GrayImage, ImageFormatError, extract_patch, read_image, upscale, write_image
from sahiref.tiling import make_region


def _img(h, w, seed=0):
    return GrayImage(np.random.default_rng(seed).integers(0, 256, size=(h, w), dtype=np.uint8))


def test_gray_image_is_immutable_copy():
    src = np.zeros((3, 4), dtype=np.uint8)
    img = GrayImage(src)
    src[0, 0] = 9
    assert img.pixels[0, 0] == 0
    assert (img.width, img.height) == (4, 3)
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1


@pytest.mark.parametrize("bad", [np.zeros((0, 3), np.uint8), np.zeros((3,), np.uint8),
                                 np.zeros((2, 2), np.uint16)])
def test_gray_image_rejects_bad_arrays(bad):
    with pytest.raises(ValueError):
        GrayImage(bad)


def test_extract_whole_and_sub_patch():
    img = _img(1024, 1024)
    whole = make_region(0, 0, 0, 1024, 1024, 1024, 1024)
    assert extract_patch(img, whole) == img
    p = extract_patch(img, make_region(1, 128, 256, 128, 128, 1024, 1024))
    assert (p.width, p.height) == (128, 128)
    assert np.array_equal(p.pixels, img.pixels[256:384, 128:256])


def test_overlapping_patches_share_samples():
    img = _img(64, 64)
    a = extract_patch(img, make_region(0, 0, 0, 40, 40, 64, 64))
    b = extract_patch(img, make_region(1, 24, 24, 40, 40, 64, 64))
    assert np.array_equal(a.pixels[24:40, 24:40], b.pixels[0:16, 0:16])


def test_extract_out_of_bounds():
    from sahiref.tiling import SliceRegion

    img = _img(10, 10)
    with pytest.raises(ValueError):
        extract_patch(img, SliceRegion(0, 5, 5, 10, 10, frozenset()))


def test_upscale_examples():
    checker = GrayImage(np.array([[0, 255], [255, 0]], dtype=np.uint8))
    up = upscale(checker, 2)
    assert np.array_equal(up.pixels, np.kron(checker.pixels, np.ones((2, 2), dtype=np.uint8)))
    assert upscale(checker, 1) == checker
    big = upscale(_img(128, 128), 2)
    assert (big.width, big.height) == (256, 256)
    with pytest.raises(ValueError):
        upscale(checker, 0.5)


@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.floats(1, 4))
def test_upscale_preserves_sample_set(pixels, scale):
    up = upscale(GrayImage(pixels), scale)
    assert set(np.unique(up.pixels)) <= set(np.unique(pixels))
    assert up.width == int(np.floor(pixels.shape[1] * scale + 0.5))


@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20))))
def test_pgm_round_trip(tmp_path_factory, pixels):
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_image(GrayImage(pixels), path)
    assert np.array_equal(read_image(path).pixels, pixels)


def test_png_round_trip(tmp_path):
    pytest.importorskip("PIL")
    img = _img(17, 23)
    write_image(img, tmp_path / "x.png")
    assert read_image(tmp_path / "x.png") == img


def test_pgm_16_bit_rejected(tmp_path):
    p = tmp_path / "deep.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(ImageFormatError, match="unsupported bit depth"):
        read_image(p)


def test_png_16_bit_rejected(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    p = tmp_path / "deep.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(p)
    with pytest.raises(ImageFormatError, match="unsupported bit depth"):
        read_image(p)


@pytest.mark.parametrize("payload", [b"P5\n4 4\n255\n" + bytes(5), b"P6\n1 1\n255\n\x00\x00\x00", b"", b"P5 4"])
def test_truncated_or_malformed_pgm(tmp_path, payload):
    p = tmp_path / "bad.pgm"
    p.write_bytes(payload)
    with pytest.raises(ImageFormatError, match="malformed file"):
        read_image(p)


def test_pgm_header_with_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
    assert read_image(p).pixels.tolist() == [[1, 2]]
