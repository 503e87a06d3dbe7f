"""Image representation, decoding, and deterministic resizing.

Images are immutable float rasters in [0, 1]. Decoding is limited to PNG
(8-bit RGB/RGBA, alpha dropped) and binary PPM so fixtures stay simple.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import PIL.Image

from .errors import DecodeError, DimensionMismatch, InvalidDimension, IoError

__all__ = [
    "Image",
    "from_array",
    "load_image",
    "resize",
    "save_png",
    "to_rgb8",
    "from_rgb8",
]


@dataclass(frozen=True)
class Image:
    """An H x W x 3 RGB raster with float64 intensities in [0, 1].

    The pixel array is write-locked after construction, so instances can be
    shared freely between workers.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidDimension(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidDimension(f"image dimensions must be >= 1, got {px.shape[:2]}")
        if px.dtype != np.float64 or not px.flags.c_contiguous:
            px = np.ascontiguousarray(px, dtype=np.float64)
            object.__setattr__(self, "pixels", px)
        lo, hi = float(px.min()), float(px.max())
        if lo < 0.0 or hi > 1.0:
            raise InvalidDimension(f"intensities must lie in [0, 1], got [{lo}, {hi}]")
        px.flags.writeable = False

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def from_array(arr) -> Image:
    """Build an Image from any array-like of shape (H, W, 3) in [0, 1]."""
    return Image(np.asarray(arr, dtype=np.float64).copy())


def _wrap_checked(px: np.ndarray) -> Image:
    """Internal fast path: wrap pixels whose invariants are structurally
    guaranteed (compositions of already-validated images), skipping the
    range scan."""
    img = object.__new__(Image)
    object.__setattr__(img, "pixels", px)
    px.flags.writeable = False
    return img


def load_image(path) -> Image:
    """Decode a PNG or binary PPM file into a normalized Image.

    Byte intensities are divided by 255. PNG alpha channels are dropped.
    Raises IoError for missing/unreadable files and DecodeError for
    unsupported or corrupt content.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    import io

    try:
        with PIL.Image.open(io.BytesIO(raw)) as im:
            fmt = im.format
            if fmt not in ("PNG", "PPM"):
                raise DecodeError(f"{path}: unsupported format {fmt!r} (PNG or PPM required)")
            if im.mode == "RGBA":
                arr = np.asarray(im)[:, :, :3]
            elif im.mode == "RGB":
                arr = np.asarray(im)
            else:
                arr = np.asarray(im.convert("RGB"))
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"{path}: not a decodable image: {exc}") from exc
    return Image(arr.astype(np.float64) / 255.0)


def _sample_positions(n_out: int, n_in: int) -> np.ndarray:
    # Corner-aligned: output sample i maps to input coordinate
    # i * (n_in - 1) / (n_out - 1); a single output sample maps to 0.
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def _interp_axis0(px: np.ndarray, n_out: int) -> np.ndarray:
    pos = _sample_positions(n_out, px.shape[0])
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, px.shape[0] - 1)
    hi = np.minimum(lo + 1, px.shape[0] - 1)
    frac = (pos - lo).reshape((-1,) + (1,) * (px.ndim - 1))
    return (1.0 - frac) * px[lo] + frac * px[hi]


def resize(img: Image, out_h: int, out_w: int) -> Image:
    """Resize with corner-aligned bilinear interpolation.

    Resizing to the input dimensions is an exact identity, and output
    intensities never leave the input's value range.
    """
    if out_h < 1 or out_w < 1:
        raise InvalidDimension(f"target dimensions must be >= 1, got {out_h}x{out_w}")
    out = _interp_axis0(img.pixels, out_h)
    out = _interp_axis0(out.transpose(1, 0, 2), out_w).transpose(1, 0, 2)
    # Convex combinations can overshoot [0,1] only by float rounding.
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out)


def save_png(img: Image, path) -> None:
    """Write an Image as an 8-bit RGB PNG."""
    arr = np.rint(img.pixels * 255.0).astype(np.uint8)
    PIL.Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def to_rgb8(img: Image) -> bytes:
    """Quantize to row-major 8-bit RGB bytes (the wire representation)."""
    return np.rint(img.pixels * 255.0).astype(np.uint8).tobytes()


def from_rgb8(height: int, width: int, data: bytes) -> Image:
    """Inverse of to_rgb8 up to quantization."""
    if len(data) != height * width * 3:
        raise DimensionMismatch(
            f"expected {height * width * 3} bytes for {height}x{width} RGB, got {len(data)}"
        )
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return Image(arr.astype(np.float64) / 255.0)
