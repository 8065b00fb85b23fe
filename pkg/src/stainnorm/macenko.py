"""Macenko stain-vector estimation and target-based normalization.

Tissue pixels (every OD channel at or above the threshold) are projected onto
the plane of the top two right singular vectors of the OD cloud; the stain
vectors are the robust angular extremes of that projection.  Normalization
keeps the source concentration field, rescales each stain by the ratio of
target/source high-percentile concentrations, and renders through the target
stain matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStainsError, NoTissueError
from .imaging import RgbImage
from .optical_density import (
    ConcentrationMap,
    OdConfig,
    StainMatrix,
    decompose,
    reconstruct,
    rgb_to_od,
)

DEFAULT_OD_THRESHOLD = 0.15


@dataclass(frozen=True)
class MacenkoParams:
    od_threshold: float = DEFAULT_OD_THRESHOLD
    angle_percentiles: tuple[float, float] = (1.0, 99.0)
    concentration_percentile: float = 99.0

    def __post_init__(self):
        low, high = self.angle_percentiles
        if not (0 < low < high < 100):
            raise ValueError("angle percentiles must satisfy 0 < low < high < 100")
        if self.od_threshold <= 0:
            raise ValueError("od_threshold must be positive")
        if not (0 < self.concentration_percentile < 100):
            raise ValueError("concentration_percentile must be in (0, 100)")


def tissue_od_pixels(img: RgbImage, od_threshold: float, cfg: OdConfig = OdConfig()):
    """Flattened OD rows restricted to tissue (all channels >= threshold)."""
    od = rgb_to_od(img, cfg).data.reshape(-1, 3)
    mask = ~np.any(od < od_threshold, axis=1)
    return od, mask


def _unit_nonneg(vec: np.ndarray) -> np.ndarray:
    """Clamp small negative components and renormalize to a unit vector."""
    clipped = np.maximum(vec, 0.0)
    norm = np.linalg.norm(clipped)
    if norm < 1e-12:
        raise DegenerateStainsError("stain direction collapsed to zero after clamping")
    return clipped / norm


def order_hematoxylin_first(v0: np.ndarray, v1: np.ndarray) -> np.ndarray:
    """Stack two stain vectors into (3, 2), hematoxylin (larger blue OD) first."""
    if v0[2] >= v1[2]:
        return np.stack([v0, v1], axis=1)
    return np.stack([v1, v0], axis=1)


def estimate_stains_macenko(img: RgbImage, p: MacenkoParams = MacenkoParams()) -> StainMatrix:
    od, mask = tissue_od_pixels(img, p.od_threshold)
    tissue = od[mask]
    if tissue.shape[0] == 0:
        raise NoTissueError(
            f"no pixel above OD threshold {p.od_threshold}; image is background"
        )
    if tissue.shape[0] < 2:
        raise DegenerateStainsError("fewer than 2 tissue pixels; OD cloud has rank < 2")

    # Plane of the two largest singular values of the (uncentered) OD cloud.
    # The ratio cutoff sits above the 8-bit quantization noise floor (~3e-3)
    # and far below any genuine second stain direction (>= 0.1 in practice).
    _, svals, vt = np.linalg.svd(tissue, full_matrices=False)
    if svals[1] <= 0.01 * svals[0]:
        raise DegenerateStainsError(
            "tissue OD cloud is effectively rank 1; a single stain cannot be split"
        )
    basis = vt[:2].T  # (3, 2)
    # SVD sign ambiguity: point both basis vectors into the data.
    for j in range(2):
        if basis[:, j].sum() < 0:
            basis[:, j] = -basis[:, j]

    coords = tissue @ basis
    angles = np.arctan2(coords[:, 1], coords[:, 0])
    low, high = np.percentile(angles, p.angle_percentiles)
    v_low = _unit_nonneg(basis @ np.array([np.cos(low), np.sin(low)]))
    v_high = _unit_nonneg(basis @ np.array([np.cos(high), np.sin(high)]))
    return StainMatrix(order_hematoxylin_first(v_low, v_high))


def concentration_scale(
    source_s: ConcentrationMap,
    source_mask: np.ndarray,
    target_s: ConcentrationMap,
    target_mask: np.ndarray,
    percentile: float,
) -> np.ndarray:
    """Per-stain ratio of high-percentile concentrations, target over source."""
    src = source_s.data.reshape(-1, 2)[source_mask]
    tgt = target_s.data.reshape(-1, 2)[target_mask]
    src_p = np.percentile(src, percentile, axis=0)
    tgt_p = np.percentile(tgt, percentile, axis=0)
    return tgt_p / np.maximum(src_p, 1e-8)


def normalize_macenko(
    source: RgbImage,
    target: RgbImage,
    p: MacenkoParams = MacenkoParams(),
    cfg: OdConfig = OdConfig(),
) -> RgbImage:
    """Map the source image onto the target's stain appearance."""
    try:
        v_src = estimate_stains_macenko(source, p)
    except (NoTissueError, DegenerateStainsError) as exc:
        raise type(exc)(f"source image: {exc}") from exc
    try:
        v_tgt = estimate_stains_macenko(target, p)
    except (NoTissueError, DegenerateStainsError) as exc:
        raise type(exc)(f"target image: {exc}") from exc

    od_src = rgb_to_od(source, cfg)
    od_tgt = rgb_to_od(target, cfg)
    s_src = decompose(od_src, v_src)
    s_tgt = decompose(od_tgt, v_tgt)

    _, src_mask = tissue_od_pixels(source, p.od_threshold, cfg)
    _, tgt_mask = tissue_od_pixels(target, p.od_threshold, cfg)
    scale = concentration_scale(s_src, src_mask, s_tgt, tgt_mask, p.concentration_percentile)

    rescaled = ConcentrationMap(s_src.data * scale[None, None, :])
    return reconstruct(rescaled, v_tgt, cfg)
