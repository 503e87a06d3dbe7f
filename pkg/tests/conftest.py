from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from limescope.image import Image, from_array


def write_ppm(path: Path, pixels: np.ndarray) -> Path:
    """Write a binary P6 PPM from a (H, W, 3) uint8 array."""
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.astype(np.uint8).tobytes())
    return path


def class_color_image(cls: int, num_classes: int, size: int = 8) -> np.ndarray:
    """Constant-color uint8 image whose red channel encodes the class index.

    Red byte = round((cls + 0.5) / C * 255) decodes back to cls via
    floor(mean_red * C) for C <= 64, including after bilinear resizing.
    """
    r = int(round((cls + 0.5) / num_classes * 255))
    px = np.zeros((size, size, 3), dtype=np.uint8)
    px[:, :, 0] = r
    px[:, :, 1] = 128
    px[:, :, 2] = 64
    return px


def make_class_tree(root: Path, per_class: int, num_classes: int, size: int = 8) -> Path:
    """Directory-per-class fixture dataset of class-encoded PPM images."""
    for c in range(num_classes):
        d = root / str(c)
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            write_ppm(d / f"img_{i:03d}.ppm", class_color_image(c, num_classes, size))
    return root


def random_image(rng: np.random.Generator, h: int, w: int) -> Image:
    return from_array(rng.random((h, w, 3)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
