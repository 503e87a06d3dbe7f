"""Helpers shared by the demo scripts."""

from pathlib import Path

import numpy as np

from limescope.image import Image, from_array

OUT = Path(__file__).resolve().parent / "demo_out"


def out_dir(name: str) -> Path:
    d = OUT / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def sign_like_image(size: int = 62, seed: int = 0) -> Image:
    """A red ring with a bright core on a textured background: a stand-in
    for a cropped road-sign photo."""
    rng = np.random.default_rng(seed)
    px = 0.25 + 0.15 * rng.random((size, size, 3))  # dim noisy background
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.sqrt((yy - size / 2) ** 2 + (xx - size / 2) ** 2)
    ring = (r < size * 0.38) & (r > size * 0.26)
    core = r <= size * 0.26
    px[ring] = [0.85, 0.1, 0.1]
    px[core] = [0.92, 0.9, 0.82]
    return from_array(np.clip(px, 0.0, 1.0))
