"""Shared synthesis helpers: two-stain test images and valid weight archives."""

from __future__ import annotations

import numpy as np
import pytest

from stainnorm.imaging import RgbImage, round_to_u8
from stainnorm.weights_io import (
    GeneratorWeights,
    NetworkArch,
    apply_spectral_normalization,
    manifest_shapes,
    weights_from_tensors,
)


def random_stain_matrix(rng: np.random.Generator) -> np.ndarray:
    """Two unit, strictly positive stain columns with a healthy angular gap."""
    while True:
        cols = rng.uniform(0.3, 1.0, size=(3, 2))
        cols /= np.linalg.norm(cols, axis=0)
        angle = np.arccos(np.clip(cols[:, 0] @ cols[:, 1], -1, 1))
        if 0.35 <= angle <= 1.2 and abs(cols[2, 0] - cols[2, 1]) > 0.03:
            return cols


def synth_concentrations(
    rng: np.random.Generator, n: int, pure_fraction: float = 0.4
) -> np.ndarray:
    """Concentration pairs with pure-stain pixels at both angular extremes."""
    s = rng.uniform(0.4, 1.6, size=(n, 2))
    n_pure = int(n * pure_fraction / 2)
    s[:n_pure, 1] = 0.0
    s[n_pure : 2 * n_pure, 0] = 0.0
    s[:n_pure, 0] = rng.uniform(1.0, 2.0, size=n_pure)
    s[n_pure : 2 * n_pure, 1] = rng.uniform(1.0, 2.0, size=n_pure)
    rng.shuffle(s, axis=0)
    return s


def render_stain_image(
    v: np.ndarray, s: np.ndarray, height: int, width: int, i0: float = 255.0
) -> RgbImage:
    """Quantized RGB rendering of concentrations mixed through stain columns."""
    od = s @ v.T  # (n, 3)
    intensity = i0 * np.power(10.0, -od)
    px = round_to_u8(intensity).reshape(height, width, 3)
    return RgbImage(px)


def make_two_stain_image(
    rng: np.random.Generator, height: int = 24, width: int = 24, v: np.ndarray | None = None
):
    """(image, stain matrix, concentrations) for a synthetic tissue patch."""
    if v is None:
        v = random_stain_matrix(rng)
    s = synth_concentrations(rng, height * width)
    return render_stain_image(v, s, height, width), v, s


def column_angles(estimated: np.ndarray, truth: np.ndarray) -> list[float]:
    """Best-assignment angles (radians) between estimated and true columns."""

    def angle(a, b):
        return float(np.arccos(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1, 1)))

    direct = [angle(estimated[:, 0], truth[:, 0]), angle(estimated[:, 1], truth[:, 1])]
    swapped = [angle(estimated[:, 0], truth[:, 1]), angle(estimated[:, 1], truth[:, 0])]
    return direct if max(direct) <= max(swapped) else swapped


def random_weight_tensors(arch: NetworkArch, rng: np.random.Generator) -> dict:
    """A full, valid tensor map for the given architecture (pre spectral norm)."""
    from stainnorm.weights_io import arch_to_meta_tensors

    tensors = {}
    for name, shape in manifest_shapes(arch).items():
        if name.startswith("meta/"):
            continue
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            data = 1.0 + 0.1 * rng.standard_normal(shape)
        elif leaf == "running_var":
            data = np.abs(1.0 + 0.1 * rng.standard_normal(shape)) + 0.05
        elif leaf in ("beta", "running_mean", "b"):
            data = 0.05 * rng.standard_normal(shape)
        elif leaf == "mu":
            data = np.zeros(shape)
        else:
            data = 0.1 * rng.standard_normal(shape)
        tensors[name] = data.astype(np.float32)
    tensors.update(arch_to_meta_tensors(arch))
    return tensors


def build_random_weights(arch: NetworkArch, seed: int = 0) -> GeneratorWeights:
    rng = np.random.default_rng(seed)
    raw = weights_from_tensors(random_weight_tensors(arch, rng), check_spectral=False)
    return apply_spectral_normalization(raw)


@pytest.fixture(scope="session")
def small_arch() -> NetworkArch:
    return NetworkArch(
        depth=3,
        base_channels=8,
        channel_cap=64,
        attention_min_res=16,
        norm_kind="batch",
        disc_base_channels=8,
    )


@pytest.fixture(scope="session")
def small_weights(small_arch) -> GeneratorWeights:
    return build_random_weights(small_arch, seed=7)
