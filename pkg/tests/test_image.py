from __future__ import annotations

import numpy as np
import pytest

from limescope.errors import DecodeError, InvalidDimension, IoError
from limescope.image import Image, from_array, from_rgb8, load_image, resize, save_png, to_rgb8

from conftest import write_ppm


class TestLoadImage:
    def test_all_255_ppm_is_all_ones(self, tmp_path):
        px = np.full((2, 2, 3), 255, dtype=np.uint8)
        img = load_image(write_ppm(tmp_path / "white.ppm", px))
        assert img.height == 2 and img.width == 2
        assert np.all(img.pixels == 1.0)

    def test_black_1x1_ppm_is_all_zero(self, tmp_path):
        px = np.zeros((1, 1, 3), dtype=np.uint8)
        img = load_image(write_ppm(tmp_path / "black.ppm", px))
        assert np.all(img.pixels == 0.0)

    def test_byte_normalization_is_exact_division(self, tmp_path):
        # 2x1 pixels (128,128,128) and (64,64,64) -> 128/255 and 64/255
        px = np.array([[[128, 128, 128], [64, 64, 64]]], dtype=np.uint8)
        img = load_image(write_ppm(tmp_path / "grays.ppm", px))
        assert img.pixels[0, 0, 0] == 128 / 255
        assert img.pixels[0, 1, 0] == 64 / 255

    def test_png_roundtrip_and_alpha_dropped(self, tmp_path):
        import PIL.Image

        rgba = np.zeros((3, 4, 4), dtype=np.uint8)
        rgba[..., 0] = 200
        rgba[..., 3] = 7  # alpha must be ignored, not composited
        PIL.Image.fromarray(rgba, mode="RGBA").save(tmp_path / "a.png")
        img = load_image(tmp_path / "a.png")
        assert img.pixels.shape == (3, 4, 3)
        assert np.all(img.pixels[..., 0] == 200 / 255)

    def test_deterministic_for_same_bytes(self, tmp_path, rng):
        px = (rng.random((5, 7, 3)) * 255).astype(np.uint8)
        p1 = write_ppm(tmp_path / "a.ppm", px)
        p2 = write_ppm(tmp_path / "b.ppm", px)
        assert np.array_equal(load_image(p1).pixels, load_image(p2).pixels)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(IoError):
            load_image(tmp_path / "nope.ppm")

    def test_garbage_is_decode_error(self, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"not an image at all")
        with pytest.raises(DecodeError):
            load_image(bad)

    def test_unsupported_format_is_decode_error(self, tmp_path):
        import PIL.Image

        PIL.Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(
            tmp_path / "img.bmp", format="BMP"
        )
        with pytest.raises(DecodeError):
            load_image(tmp_path / "img.bmp")


class TestResize:
    def test_constant_image_stays_constant(self):
        img = from_array(np.full((4, 4, 3), 0.25))
        out = resize(img, 62, 62)
        assert out.pixels.shape == (62, 62, 3)
        assert np.all(out.pixels == 0.25)

    def test_identity_size_is_bit_equal(self, rng):
        img = from_array(rng.random((9, 5, 3)))
        out = resize(img, 9, 5)
        assert np.array_equal(out.pixels, img.pixels)

    def test_corner_aligned_midpoint(self):
        # 2x1 (0.0, 1.0) -> 3x1 must sample at input coords 0, 0.5, 1.
        img = from_array(np.array([[[0.0] * 3], [[1.0] * 3]]))
        out = resize(img, 3, 1)
        assert np.allclose(out.pixels[:, 0, 0], [0.0, 0.5, 1.0], atol=1e-15)

    def test_value_range_preserved(self, rng):
        for _ in range(20):
            img = from_array(0.2 + 0.6 * rng.random((7, 11, 3)))
            out = resize(img, 13, 5)
            assert out.pixels.min() >= img.pixels.min() - 1e-9
            assert out.pixels.max() <= img.pixels.max() + 1e-9

    def test_idempotent_at_fixed_size(self, rng):
        img = from_array(rng.random((8, 8, 3)))
        once = resize(img, 5, 9)
        twice = resize(once, 5, 9)
        assert np.array_equal(once.pixels, twice.pixels)

    def test_zero_target_rejected(self):
        img = from_array(np.zeros((2, 2, 3)))
        with pytest.raises(InvalidDimension):
            resize(img, 0, 4)
        with pytest.raises(InvalidDimension):
            resize(img, 4, 0)


class TestImageType:
    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidDimension):
            from_array(np.full((2, 2, 3), 1.5))

    def test_rejects_bad_shape(self):
        with pytest.raises(InvalidDimension):
            from_array(np.zeros((2, 2)))

    def test_pixels_are_immutable(self):
        img = from_array(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1.0

    def test_rgb8_roundtrip(self, rng):
        img = from_array(np.round(rng.random((4, 6, 3)) * 255) / 255)
        again = from_rgb8(4, 6, to_rgb8(img))
        assert np.array_equal(again.pixels, img.pixels)

    def test_save_png_roundtrip(self, tmp_path, rng):
        img = from_array(np.round(rng.random((6, 3, 3)) * 255) / 255)
        save_png(img, tmp_path / "x.png")
        assert np.array_equal(load_image(tmp_path / "x.png").pixels, img.pixels)
