"""Optical-density conversion and the two-stain color-deconvolution algebra.

An RGB intensity I maps to optical density ``od = log10(i0 / max(I, epsilon))``
per channel; stains mix linearly in OD space, so a pixel's OD 3-vector factors
as the stain matrix (two unit columns, hematoxylin first) times a non-negative
2-vector of stain concentrations.  ``decompose`` solves that factorization per
pixel as an exact two-variable non-negative least squares; ``reconstruct``
inverts it back to RGB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .imaging import RgbImage, round_to_u8


@dataclass(frozen=True)
class OdConfig:
    """Illumination intensity and the floor that keeps log10 finite."""

    i0: float = 255.0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.i0 <= 0:
            raise ValueError("i0 must be positive")
        if not (0 < self.epsilon <= self.i0):
            raise ValueError("epsilon must satisfy 0 < epsilon <= i0")


@dataclass(frozen=True)
class OdImage:
    """Per-channel optical densities; ``data`` is an (H, W, 3) float array >= 0."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"OdImage needs an (H, W, 3) array, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("OdImage values must be finite")
        if arr.size and arr.min() < 0:
            raise ValueError("OdImage values must be non-negative")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class StainMatrix:
    """Two unit-norm, non-negative OD absorption columns: hematoxylin, eosin.

    ``columns`` has shape (3, 2); column 0 is hematoxylin (the column with the
    larger blue-channel OD), column 1 eosin.
    """

    columns: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.columns, dtype=np.float64)
        if arr.shape != (3, 2):
            raise ValueError(f"StainMatrix needs shape (3, 2), got {arr.shape}")
        if arr.min() < 0:
            raise ValueError("stain vectors must be non-negative")
        norms = np.linalg.norm(arr, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError(f"stain vectors must be unit norm, got norms {norms}")
        object.__setattr__(self, "columns", arr)

    @property
    def hematoxylin(self) -> np.ndarray:
        return self.columns[:, 0]

    @property
    def eosin(self) -> np.ndarray:
        return self.columns[:, 1]


@dataclass(frozen=True)
class ConcentrationMap:
    """Per-pixel stain densities; ``data`` is an (H, W, 2) float array >= 0."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError(f"ConcentrationMap needs an (H, W, 2) array, got {arr.shape}")
        if arr.size and arr.min() < 0:
            raise ValueError("concentrations must be non-negative")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def rgb_to_od(img: RgbImage, cfg: OdConfig = OdConfig()) -> OdImage:
    """od = log10(i0 / max(I, epsilon)) per channel."""
    intensity = np.maximum(img.data.astype(np.float64), cfg.epsilon)
    od = np.log10(cfg.i0 / intensity)
    # Intensities above i0 would give negative od; clamp (only reachable with i0 < 255).
    return OdImage(np.maximum(od, 0.0))


def od_to_rgb(od: OdImage, cfg: OdConfig = OdConfig()) -> RgbImage:
    """I = i0 * 10^(-od), rounded to the nearest 8-bit value."""
    intensity = cfg.i0 * np.power(10.0, -od.data)
    return RgbImage(round_to_u8(np.minimum(intensity, cfg.i0)))


def nn_lasso_2(od_pixels: np.ndarray, v: np.ndarray, l1: float = 0.0) -> np.ndarray:
    """Solve min_{s>=0} ||od - V s||^2 + l1 * (s0 + s1) for each OD 3-vector.

    Exact two-variable active-set solve, vectorized over pixels: take the
    unconstrained stationary point; where it leaves the non-negative orthant,
    fall back to the better of the two single-stain solutions.

    ``od_pixels`` is (N, 3), ``v`` is (3, 2); returns (N, 2).
    """
    v = np.asarray(v, dtype=np.float64)
    gram = v.T @ v
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] * gram[1, 0]
    if abs(det) < 1e-12:
        raise ValueError("stain matrix is rank deficient; cannot decompose")
    rhs = od_pixels @ v - 0.5 * l1  # (N, 2)

    inv = np.array([[gram[1, 1], -gram[0, 1]], [-gram[1, 0], gram[0, 0]]]) / det
    s_free = rhs @ inv.T

    # Single-stain candidates with the other concentration pinned to zero.
    s0_only = np.maximum(rhs[:, 0] / gram[0, 0], 0.0)
    s1_only = np.maximum(rhs[:, 1] / gram[1, 1], 0.0)

    def objective(s0, s1):
        # ||od - Vs||^2 + l1*|s|_1 up to the constant ||od||^2, which cancels
        # when comparing candidates.
        quad = (
            gram[0, 0] * s0 * s0
            + 2.0 * gram[0, 1] * s0 * s1
            + gram[1, 1] * s1 * s1
        )
        lin = od_pixels @ v
        return quad - 2.0 * (lin[:, 0] * s0 + lin[:, 1] * s1) + l1 * (s0 + s1)

    zeros = np.zeros(od_pixels.shape[0])
    obj0 = objective(s0_only, zeros)
    obj1 = objective(zeros, s1_only)
    s_boundary = np.where(
        (obj0 <= obj1)[:, None],
        np.stack([s0_only, zeros], axis=1),
        np.stack([zeros, s1_only], axis=1),
    )

    interior = np.all(s_free >= 0.0, axis=1)
    out = np.where(interior[:, None], np.maximum(s_free, 0.0), s_boundary)
    return out


def decompose(od: OdImage, v: StainMatrix) -> ConcentrationMap:
    """Per-pixel non-negative least squares of OD onto the two stain columns."""
    flat = od.data.reshape(-1, 3)
    s = nn_lasso_2(flat, v.columns, l1=0.0)
    return ConcentrationMap(s.reshape(od.height, od.width, 2))


def reconstruct(s: ConcentrationMap, v: StainMatrix, cfg: OdConfig = OdConfig()) -> RgbImage:
    """Render concentrations through a stain matrix back to 8-bit RGB."""
    od = s.data.reshape(-1, 2) @ v.columns.T
    od_img = OdImage(np.maximum(od.reshape(s.height, s.width, 3), 0.0))
    return od_to_rgb(od_img, cfg)


def od_mean_projection_residual(od: OdImage, v: StainMatrix) -> float:
    """Mean OD distance from pixels to the non-negative stain cone (diagnostic)."""
    flat = od.data.reshape(-1, 3)
    s = nn_lasso_2(flat, v.columns)
    resid = flat - s @ v.columns.T
    return float(np.mean(np.linalg.norm(resid, axis=1)))
