import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stainnorm.errors import MalformedImageError, UnsupportedFormatError
from stainnorm.imaging import (
    GrayImage,
    RgbImage,
    read_image,
    resize,
    to_grayscale,
    write_image,
)


def solid(r, g, b, h=4, w=5):
    return RgbImage(np.tile(np.array([r, g, b], dtype=np.uint8), (h, w, 1)))


class TestGrayscale:
    def test_white_is_one(self):
        gray = to_grayscale(solid(255, 255, 255))
        assert np.all(gray.data == 1.0)

    def test_black_is_zero(self):
        gray = to_grayscale(solid(0, 0, 0))
        assert np.all(gray.data == 0.0)

    def test_pure_red_matches_luma_coefficient(self):
        # Independent evaluation of the luma formula: (0.299*255 + 0 + 0)/255.
        expected = 0.299 * 255 / 255
        gray = to_grayscale(solid(255, 0, 0))
        assert np.allclose(gray.data, expected, atol=1e-12)

    def test_dimensions_preserved(self):
        gray = to_grayscale(solid(10, 20, 30, h=7, w=3))
        assert (gray.height, gray.width) == (7, 3)

    @given(
        st.integers(0, 255), st.integers(0, 255), st.integers(0, 255)
    )
    @settings(max_examples=60, deadline=None)
    def test_range_property(self, r, g, b):
        gray = to_grayscale(solid(r, g, b, h=1, w=1))
        assert 0.0 <= gray.data[0, 0] <= 1.0

    def test_range_exhaustive_over_8bit_triples(self):
        # All 256^3 combinations, vectorized channel-by-channel.
        r = np.arange(256, dtype=np.float64)[:, None, None]
        g = np.arange(256, dtype=np.float64)[None, :, None]
        b = np.arange(256, dtype=np.float64)[None, None, :]
        luma = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0
        assert luma.min() >= 0.0
        assert luma.max() <= 1.0


class TestPngRoundTrip:
    def test_lossless_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = RgbImage(rng.integers(0, 256, size=(13, 9, 3), dtype=np.uint8))
        path = tmp_path / "x.png"
        write_image(img, path)
        again = read_image(path)
        assert np.array_equal(img.data, again.data)

    def test_one_by_one(self, tmp_path):
        img = RgbImage(np.array([[[1, 2, 3]]], dtype=np.uint8))
        path = tmp_path / "tiny.png"
        write_image(img, path)
        assert np.array_equal(read_image(path).data, img.data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_image(tmp_path / "nope.png")

    def test_truncated_file_is_malformed(self, tmp_path):
        img = RgbImage(np.zeros((16, 16, 3), dtype=np.uint8))
        path = tmp_path / "t.png"
        write_image(img, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(MalformedImageError):
            read_image(path)

    def test_garbage_bytes_are_malformed(self, tmp_path):
        path = tmp_path / "g.png"
        path.write_bytes(b"not a png at all")
        with pytest.raises(MalformedImageError):
            read_image(path)

    def test_16bit_png_rejected(self, tmp_path):
        from PIL import Image

        arr16 = (np.arange(64, dtype=np.uint16) * 1000 % 65535).reshape(8, 8)
        path = tmp_path / "deep.png"
        Image.fromarray(arr16).save(path)
        with pytest.raises(UnsupportedFormatError):
            read_image(path)


class TestResize:
    def test_500_to_256_dims(self):
        rng = np.random.default_rng(5)
        img = RgbImage(rng.integers(0, 256, size=(500, 500, 3), dtype=np.uint8))
        out = resize(img, 256, 256)
        assert (out.width, out.height) == (256, 256)

    def test_same_dims_identity(self):
        rng = np.random.default_rng(6)
        img = RgbImage(rng.integers(0, 256, size=(21, 34, 3), dtype=np.uint8))
        out = resize(img, 34, 21)
        assert np.array_equal(out.data, img.data)

    @given(st.integers(1, 40), st.integers(1, 40))
    @settings(max_examples=30, deadline=None)
    def test_constant_stays_constant(self, w, h):
        img = solid(120, 37, 210, h=2, w=2)
        out = resize(img, w, h)
        assert np.all(out.data == np.array([120, 37, 210], dtype=np.uint8))

    def test_zero_target_rejected(self):
        img = solid(0, 0, 0)
        with pytest.raises(ValueError):
            resize(img, 0, 10)
        with pytest.raises(ValueError):
            resize(img, 10, 0)

    def test_upscale_interpolates_between_pixels(self):
        # 1x2 black/white strip doubled in width: midpoints land between them.
        img = RgbImage(np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8))
        out = resize(img, 4, 1)
        values = out.data[0, :, 0].tolist()
        assert values[0] == 0 and values[-1] == 255
        assert values[0] <= values[1] <= values[2] <= values[3]


class TestContainers:
    def test_rgb_invariants(self):
        with pytest.raises(ValueError):
            RgbImage(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            RgbImage(np.zeros((4, 4, 3), dtype=np.float32))

    def test_gray_invariants(self):
        with pytest.raises(ValueError):
            GrayImage(np.full((3, 3), 1.5))
        with pytest.raises(ValueError):
            GrayImage(np.full((3, 3, 1), 0.5))
