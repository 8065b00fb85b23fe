"""Forward evaluation of every term in the adversarial training objective.

All image tensors live in model space: float arrays of shape (B, 3, H, W)
with values in [-1, 1].  L1 terms are computed there; structural terms map to
[0, 1] grayscale first.  Discriminator outputs enter as one scalar per image
(the mean of the decision map): probabilities for the cross-entropy mode,
raw logits for least-squares.

The total is the fixed-order weighted sum

    adv_y + adv_x + boundary + alpha*cyc + beta*scyc + gamma*dssim + delta*id

so a reported breakdown always sums to the reported total bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .imaging import LUMA_WEIGHTS, GrayImage
from .ssim import SsimParams, ssim

ADV_MODES = ("ce", "ls")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0  # cycle L1
    beta: float = 10.0  # structural cycle
    gamma: float = 10.0  # mapped-image structural
    delta: float = 0.1  # identity L1

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class AdvTerms:
    """Adversarial objective value plus the pieces each player optimizes."""

    base_value: float  # real + fake terms
    generator_term: float
    boundary_term: float = 0.0

    @property
    def value(self) -> float:
        return self.base_value + self.boundary_term


def _scalar_batch(v) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("discriminator outputs must be a 1-D batch of scalars")
    return arr


def _check_probability(arr: np.ndarray, name: str) -> None:
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"{name} must lie strictly inside (0, 1) in cross-entropy mode")


def adv_loss_y(d_y_real, d_y_fake, mode: str = "ce") -> AdvTerms:
    """Objective for the discriminator judging the target domain."""
    real = _scalar_batch(d_y_real)
    fake = _scalar_batch(d_y_fake)
    if mode == "ce":
        _check_probability(real, "D_Y(real)")
        _check_probability(fake, "D_Y(fake)")
        gen = float(np.mean(np.log(1.0 - fake)))
        return AdvTerms(base_value=float(np.mean(np.log(real))) + gen, generator_term=gen)
    if mode == "ls":
        value = float(np.mean((real - 1.0) ** 2)) + float(np.mean(fake**2))
        return AdvTerms(base_value=value, generator_term=float(np.mean((fake - 1.0) ** 2)))
    raise ValueError(f"unknown adversarial mode {mode!r}; expected one of {ADV_MODES}")


def adv_loss_x_with_boundary(d_x_real, d_x_fake, d_x_on_real_y, mode: str = "ce") -> AdvTerms:
    """Source-domain objective plus the boundary-control penalty.

    The boundary term punishes the source-domain discriminator for accepting
    real target-domain images, keeping its decision boundary away from the
    target distribution.  It belongs to the discriminator's objective only.
    """
    base = adv_loss_y(d_x_real, d_x_fake, mode)
    on_y = _scalar_batch(d_x_on_real_y)
    if mode == "ce":
        _check_probability(on_y, "D_X(y)")
        boundary = float(np.mean(np.log(1.0 - on_y)))
    else:
        boundary = float(np.mean(on_y**2))
    return AdvTerms(
        base_value=base.base_value,
        generator_term=base.generator_term,
        boundary_term=boundary,
    )


def _batch(arr, name: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 4 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (B, 3, H, W), got {a.shape}")
    return a


def _pairwise_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def l1_mean(a, b, what: str = "L1 pair") -> float:
    a = _batch(a, what)
    b = _batch(b, what)
    _pairwise_dims(a, b, what)
    return float(np.mean(np.abs(a - b)))


def gray01(batch: np.ndarray) -> np.ndarray:
    """Model-space (B, 3, H, W) -> grayscale (B, H, W) in [0, 1]."""
    x01 = np.clip((batch + 1.0) / 2.0, 0.0, 1.0)
    r, g, b = LUMA_WEIGHTS
    return r * x01[:, 0] + g * x01[:, 1] + b * x01[:, 2]


def batch_dssim(a, b, p: SsimParams, what: str = "DSSIM pair") -> float:
    """Mean over the batch of (1 - SSIM(gray(a_i), gray(b_i))) / 2."""
    a = _batch(a, what)
    b = _batch(b, what)
    _pairwise_dims(a, b, what)
    ga, gb = gray01(a), gray01(b)
    vals = [
        (1.0 - ssim(GrayImage(np.clip(ga[i], 0, 1)), GrayImage(np.clip(gb[i], 0, 1)), p)) / 2.0
        for i in range(a.shape[0])
    ]
    return float(np.mean(vals))


def cycle_loss(x, cycled_x, y, cycled_y) -> float:
    """L1 reconstruction error after a full round trip, both directions summed."""
    return l1_mean(x, cycled_x, "cycle x") + l1_mean(y, cycled_y, "cycle y")


def structural_cycle_loss(x, cycled_x, y, cycled_y, p: SsimParams = SsimParams()) -> float:
    """Color-agnostic round-trip dissimilarity, both directions summed."""
    return batch_dssim(cycled_x, x, p, "structural cycle x") + batch_dssim(
        cycled_y, y, p, "structural cycle y"
    )


def dssim_mapped_loss(x, fake_y, y, fake_x, p: SsimParams = SsimParams()) -> float:
    """Structural dissimilarity between each image and its translation."""
    return batch_dssim(fake_y, x, p, "mapped x") + batch_dssim(fake_x, y, p, "mapped y")


def identity_loss(y, id_y, x, id_x) -> float:
    """L1 penalty for a generator disturbing an image already in its target domain."""
    return l1_mean(y, id_y, "identity y") + l1_mean(x, id_x, "identity x")


_BUNDLE_IMAGES = ("x", "y", "fake_y", "fake_x", "cycled_x", "cycled_y", "id_x", "id_y")
_BUNDLE_SCALARS = ("d_y_real", "d_y_fake", "d_x_real", "d_x_fake", "d_x_on_real_y")


@dataclass(frozen=True)
class BatchBundle:
    """Everything one optimization step produces, as plain arrays."""

    x: np.ndarray
    y: np.ndarray
    fake_y: np.ndarray  # x mapped toward the target domain
    fake_x: np.ndarray  # y mapped toward the source domain
    cycled_x: np.ndarray
    cycled_y: np.ndarray
    id_x: np.ndarray
    id_y: np.ndarray
    d_y_real: np.ndarray
    d_y_fake: np.ndarray
    d_x_real: np.ndarray
    d_x_fake: np.ndarray
    d_x_on_real_y: np.ndarray

    def __post_init__(self):
        ref = _batch(self.x, "x")
        for name in _BUNDLE_IMAGES:
            arr = _batch(getattr(self, name), name)
            if arr.shape != ref.shape:
                raise DimensionMismatchError(
                    f"bundle field {name} has shape {arr.shape}, expected {ref.shape}"
                )
            object.__setattr__(self, name, arr)
        for name in _BUNDLE_SCALARS:
            arr = _scalar_batch(getattr(self, name))
            object.__setattr__(self, name, arr)


def bundle_from_tensors(tensors: dict) -> BatchBundle:
    """Build a bundle from a name->array map (e.g. a tensor archive dump)."""
    missing = [n for n in _BUNDLE_IMAGES + _BUNDLE_SCALARS if n not in tensors]
    if missing:
        raise ValueError(f"bundle is missing tensors: {missing}")
    return BatchBundle(**{n: np.asarray(tensors[n], dtype=np.float64) for n in _BUNDLE_IMAGES + _BUNDLE_SCALARS})


@dataclass(frozen=True)
class LossBreakdown:
    """Raw term values, their weighted contributions, and the exact-order total."""

    adv_y: float
    adv_x: float
    boundary: float
    cyc: float
    scyc: float
    dssim: float
    id: float
    weighted: dict
    total: float

    CSV_FIELDS = ("adv_y", "adv_x", "boundary", "cyc", "scyc", "dssim", "id", "total")

    def csv_row(self) -> str:
        return ",".join(f"{getattr(self, f):.10g}" for f in self.CSV_FIELDS)


def weighted_total(
    adv_y: float,
    adv_x: float,
    boundary: float,
    cyc: float,
    scyc: float,
    dssim: float,
    id: float,
    w: LossWeights = LossWeights(),
) -> float:
    """Fixed-order weighted sum of raw term values."""
    total = adv_y
    total += adv_x
    total += boundary
    total += w.alpha * cyc
    total += w.beta * scyc
    total += w.gamma * dssim
    total += w.delta * id
    return total


def total_objective(
    bundle: BatchBundle,
    w: LossWeights = LossWeights(),
    p: SsimParams = SsimParams(),
    mode: str = "ce",
) -> LossBreakdown:
    adv_y = adv_loss_y(bundle.d_y_real, bundle.d_y_fake, mode)
    adv_x = adv_loss_x_with_boundary(
        bundle.d_x_real, bundle.d_x_fake, bundle.d_x_on_real_y, mode
    )
    cyc = cycle_loss(bundle.x, bundle.cycled_x, bundle.y, bundle.cycled_y)
    scyc = structural_cycle_loss(bundle.x, bundle.cycled_x, bundle.y, bundle.cycled_y, p)
    dss = dssim_mapped_loss(bundle.x, bundle.fake_y, bundle.y, bundle.fake_x, p)
    idl = identity_loss(bundle.y, bundle.id_y, bundle.x, bundle.id_x)

    weighted = {
        "adv_y": adv_y.value,
        "adv_x": adv_x.base_value,
        "boundary": adv_x.boundary_term,
        "cyc": w.alpha * cyc,
        "scyc": w.beta * scyc,
        "dssim": w.gamma * dss,
        "id": w.delta * idl,
    }
    total = weighted_total(
        adv_y.value, adv_x.base_value, adv_x.boundary_term, cyc, scyc, dss, idl, w
    )
    return LossBreakdown(
        adv_y=adv_y.value,
        adv_x=adv_x.base_value,
        boundary=adv_x.boundary_term,
        cyc=cyc,
        scyc=scyc,
        dssim=dss,
        id=idl,
        weighted=weighted,
        total=total,
    )
