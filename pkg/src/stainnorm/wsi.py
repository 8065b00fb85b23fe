"""Patch extraction, per-patch normalization, and seam-consistent stitching.

Large images are covered by a deterministic row-major grid of fixed-size
patches over a padded canvas (white padding by default, matching slide
background); stitching crops the padding back off, so extract -> stitch is an
exact inverse whenever stride equals the patch size.  Per-patch failures are
collected with their grid coordinates instead of aborting the slide, unless
fail-fast is requested.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import PatchGridError, ProcessingError, StainNormError
from .imaging import RgbImage, resize, to_grayscale
from .inference import GeneratorWeights, generator_forward
from .macenko import MacenkoParams, normalize_macenko
from .vahadane import SnmfParams, normalize_vahadane

GENERATOR_INPUT_SIDE = 256


@dataclass(frozen=True)
class PatchGrid:
    source_dims: tuple[int, int]  # (W, H)
    patch_size: int = 500
    stride: int = 500
    pad_color: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self):
        w, h = self.source_dims
        if w < 1 or h < 1:
            raise ValueError("source dims must be positive")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        if not (0 < self.stride <= self.patch_size):
            raise ValueError("stride must lie in (0, patch_size]")

    @property
    def cols(self) -> int:
        return math.ceil(self.source_dims[0] / self.stride)

    @property
    def rows(self) -> int:
        return math.ceil(self.source_dims[1] / self.stride)

    @property
    def canvas_dims(self) -> tuple[int, int]:
        return (
            (self.cols - 1) * self.stride + self.patch_size,
            (self.rows - 1) * self.stride + self.patch_size,
        )


@dataclass(frozen=True)
class PatchRecord:
    row: int
    col: int
    x: int
    y: int
    image: RgbImage


@dataclass(frozen=True)
class PatchFailure:
    row: int
    col: int
    message: str


def _padded_canvas(img: RgbImage, g: PatchGrid) -> np.ndarray:
    cw, ch = g.canvas_dims
    canvas = np.empty((ch, cw, 3), dtype=np.uint8)
    canvas[:, :] = np.array(g.pad_color, dtype=np.uint8)
    canvas[: img.height, : img.width] = img.data
    return canvas


def extract_patches(img: RgbImage, g: PatchGrid) -> list[PatchRecord]:
    """Row-major list of rows x cols patches over the padded canvas."""
    if (img.width, img.height) != g.source_dims:
        raise PatchGridError(
            f"image is {img.width}x{img.height} but grid expects {g.source_dims}"
        )
    canvas = _padded_canvas(img, g)
    records = []
    for row in range(g.rows):
        for col in range(g.cols):
            x, y = col * g.stride, row * g.stride
            tile = canvas[y : y + g.patch_size, x : x + g.patch_size].copy()
            records.append(PatchRecord(row, col, x, y, RgbImage(tile)))
    return records


def stitch(patches, g: PatchGrid) -> RgbImage:
    """Reassemble a complete grid back to an image of the original dimensions."""
    expected = {(r, c) for r in range(g.rows) for c in range(g.cols)}
    seen = set()
    cw, ch = g.canvas_dims
    canvas = np.zeros((ch, cw, 3), dtype=np.uint8)
    for rec in patches:
        key = (rec.row, rec.col)
        if key in seen:
            raise PatchGridError(f"duplicate patch at grid coords {key}")
        if key not in expected:
            raise PatchGridError(f"patch {key} outside the {g.rows}x{g.cols} grid")
        if rec.image.width != g.patch_size or rec.image.height != g.patch_size:
            raise PatchGridError(
                f"patch {key} is {rec.image.width}x{rec.image.height}, "
                f"expected {g.patch_size}x{g.patch_size}"
            )
        seen.add(key)
        canvas[rec.y : rec.y + g.patch_size, rec.x : rec.x + g.patch_size] = rec.image.data
    missing = sorted(expected - seen)
    if missing:
        raise PatchGridError(f"missing patches at grid coords {missing}")
    w, h = g.source_dims
    return RgbImage(canvas[:h, :w].copy())


def make_patch_normalizer(
    method: str,
    target: RgbImage | None = None,
    weights: GeneratorWeights | None = None,
    macenko_params: MacenkoParams = MacenkoParams(),
    snmf_params: SnmfParams = SnmfParams(),
):
    """Callable RgbImage -> RgbImage for one normalization method."""
    if method == "macenko":
        if target is None:
            raise ValueError("macenko normalization needs a target image")
        return lambda patch: normalize_macenko(patch, target, macenko_params)
    if method == "vahadane":
        if target is None:
            raise ValueError("vahadane normalization needs a target image")
        return lambda patch: normalize_vahadane(patch, target, snmf_params)
    if method == "saasn":
        if weights is None:
            raise ValueError("saasn normalization needs a weight archive")

        def run(patch: RgbImage) -> RgbImage:
            side = GENERATOR_INPUT_SIDE
            if patch.width == side and patch.height == side:
                return generator_forward(patch, weights)
            shrunk = resize(patch, side, side)
            mapped = generator_forward(shrunk, weights)
            return resize(mapped, patch.width, patch.height)

        return run
    raise ValueError(f"unknown normalization method {method!r}")


def normalize_wsi(
    img: RgbImage,
    normalizer,
    g: PatchGrid | None = None,
    fail_fast: bool = False,
    workers: int = 1,
) -> tuple[RgbImage, list[PatchFailure]]:
    """Extract -> normalize each patch -> stitch.

    Failed patches pass through unnormalized (with their grid coordinates
    reported) unless ``fail_fast`` is set.  The output does not depend on
    ``workers``.
    """
    if g is None:
        g = PatchGrid(source_dims=(img.width, img.height))
    records = extract_patches(img, g)

    def process(rec: PatchRecord):
        try:
            return PatchRecord(rec.row, rec.col, rec.x, rec.y, normalizer(rec.image)), None
        except StainNormError as exc:
            return rec, PatchFailure(rec.row, rec.col, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(process, records))
    else:
        results = [process(rec) for rec in records]

    failures = [fail for _, fail in results if fail is not None]
    if fail_fast and failures:
        first = failures[0]
        raise ProcessingError(
            f"patch (row {first.row}, col {first.col}) failed: {first.message}"
        )
    return stitch([rec for rec, _ in results], g), failures


def seam_score(img: RgbImage, g: PatchGrid) -> float:
    """Mean absolute grayscale gradient across patch boundaries minus the same
    statistic away from boundaries.  Near zero for seamless images, positive
    when patch borders are visible."""
    gray = to_grayscale(img).data
    h, w = gray.shape
    col_grads = np.abs(np.diff(gray, axis=1))  # (h, w-1); index x is pair (x, x+1)
    row_grads = np.abs(np.diff(gray, axis=0))

    v_bounds = [c * g.stride - 1 for c in range(1, g.cols) if 0 < c * g.stride < w]
    h_bounds = [r * g.stride - 1 for r in range(1, g.rows) if 0 < r * g.stride < h]

    col_mask = np.zeros(w - 1, dtype=bool)
    col_mask[v_bounds] = True
    row_mask = np.zeros(h - 1, dtype=bool)
    row_mask[h_bounds] = True

    boundary_vals = np.concatenate(
        [col_grads[:, col_mask].ravel(), row_grads[row_mask, :].ravel()]
    )
    interior_vals = np.concatenate(
        [col_grads[:, ~col_mask].ravel(), row_grads[~row_mask, :].ravel()]
    )
    if boundary_vals.size == 0 or interior_vals.size == 0:
        return 0.0
    return float(boundary_vals.mean() - interior_vals.mean())
