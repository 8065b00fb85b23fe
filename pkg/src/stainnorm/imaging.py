"""Image containers, grayscale conversion, bilinear resize, and PNG I/O.

Conventions fixed here and relied on everywhere else:

* ``RgbImage`` wraps an ``(H, W, 3)`` uint8 array, ``GrayImage`` an ``(H, W)``
  float64 array with values in [0, 1].
* Grayscale uses the BT.601 luma weights (0.299, 0.587, 0.114) on [0, 255]
  channels, divided by 255.
* Resize is plain bilinear with half-pixel centers (source coordinate
  ``(dst + 0.5) * src/dst - 0.5``, edges clamped), no antialiasing.  The
  training side uses the identical kernel so resampled tensors agree.
* Quantization to uint8 always rounds half away from zero (``floor(x + 0.5)``
  for non-negative values).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DimensionMismatchError, MalformedImageError, UnsupportedFormatError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def round_to_u8(values: np.ndarray) -> np.ndarray:
    """Round non-negative float values half-up and clip into [0, 255] uint8."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster; ``data`` is an (H, W, 3) uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"RgbImage needs an (H, W, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("RgbImage must have positive dimensions")
        if arr.dtype != np.uint8:
            raise ValueError(f"RgbImage data must be uint8, got {arr.dtype}")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, RgbImage) and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class GrayImage:
    """Scalar raster in [0, 1]; ``data`` is an (H, W) float array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage needs an (H, W) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("GrayImage must have positive dimensions")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("GrayImage values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def to_grayscale(img: RgbImage) -> GrayImage:
    """BT.601 luma of an RGB image, scaled to [0, 1]."""
    r, g, b = LUMA_WEIGHTS
    px = img.data.astype(np.float64)
    luma = (r * px[:, :, 0] + g * px[:, :, 1] + b * px[:, :, 2]) / 255.0
    # Weights sum to 1 so luma <= 255/255; guard fp dust all the same.
    return GrayImage(np.clip(luma, 0.0, 1.0))


def gray_from_float(arr: np.ndarray) -> GrayImage:
    """Wrap an already-normalized float array, clipping fp dust into [0, 1]."""
    return GrayImage(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0))


def read_image(path) -> RgbImage:
    """Decode an 8-bit PNG (RGB, grayscale, or palette) into an RgbImage.

    16-bit rasters are rejected rather than silently truncated.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise UnsupportedFormatError(
                    f"{path}: unsupported bit depth/mode {mode!r}; expected 8-bit"
                )
            if mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnsupportedFormatError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise MalformedImageError(f"{path}: cannot decode raster ({exc})") from exc
    return RgbImage(arr)


def write_image(img: RgbImage, path) -> None:
    """Write an RgbImage as an 8-bit RGB PNG (lossless round trip)."""
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"parent directory does not exist: {parent}")
    Image.fromarray(img.data, mode="RGB").save(path, format="PNG")


def _axis_coords(dst: int, src: int):
    """Half-pixel-center source coordinates for one axis, clamped to the edge."""
    coords = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coords - lo
    return lo, hi, frac


def resize(img: RgbImage, width: int, height: int) -> RgbImage:
    """Bilinear resize to (width, height)."""
    if width < 1 or height < 1:
        raise ValueError(f"resize target must be positive, got {width}x{height}")
    if width == img.width and height == img.height:
        return RgbImage(img.data.copy())
    x0, x1, fx = _axis_coords(width, img.width)
    y0, y1, fy = _axis_coords(height, img.height)
    px = img.data.astype(np.float64)
    top = px[y0][:, x0] * (1.0 - fx)[None, :, None] + px[y0][:, x1] * fx[None, :, None]
    bot = px[y1][:, x0] * (1.0 - fx)[None, :, None] + px[y1][:, x1] * fx[None, :, None]
    out = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    return RgbImage(round_to_u8(out))


def require_same_dims(a, b, what: str = "images") -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatchError(
            f"{what} differ in size: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
