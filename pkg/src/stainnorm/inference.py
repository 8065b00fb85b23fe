"""Forward-only U-Net generator and patch discriminator.

Every block is convolution -> normalization -> activation, kernel 4, padding 1,
followed by a self-attention layer wherever the block's channel count allows
it.  The encoder halves spatial dims with stride 2; the decoder mirrors it
with transposed convolutions and concatenates the matching encoder output
before each upsampling stage.  Normalization at inference uses the running
statistics stored in the weight file, so a forward pass is a pure function of
(image, weights).

Model pixel space is [-1, 1]: uint8 input maps through ``px / 127.5 - 1`` and
the tanh output maps back through ``(y + 1) * 127.5``.
"""

from __future__ import annotations

import math

import numpy as np

from .attention import AttentionParams, attention_forward_kv
from .errors import DimensionMismatchError
from .imaging import RgbImage, round_to_u8
from .weights_io import (
    ConvBlockSpec,
    GeneratorWeights,
    discriminator_blocks,
    generator_blocks,
)

BN_EPS = 1e-5
LEAKY_SLOPE = 0.2


def conv2d(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Plain 2-D convolution (cross-correlation); x is (Ci, H, W), w (Co, Ci, kh, kw)."""
    co, ci, kh, kw = w.shape
    if x.shape[0] != ci:
        raise DimensionMismatchError(f"conv input has {x.shape[0]} channels, kernel expects {ci}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (Ci, Ho, Wo, kh, kw)
    _, ho, wo, _, _ = windows.shape
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(ho * wo, ci * kh * kw)
    out = cols @ w.reshape(co, -1).T
    return out.T.reshape(co, ho, wo)


def conv_transpose2d(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Transposed convolution; x is (Ci, H, W), w (Ci, Co, kh, kw).

    Implemented as zero-dilation of the input followed by a stride-1
    convolution with the channel-swapped, spatially flipped kernel.
    """
    ci, co, kh, kw = w.shape
    if x.shape[0] != ci:
        raise DimensionMismatchError(f"convT input has {x.shape[0]} channels, kernel expects {ci}")
    _, h, wd = x.shape
    dil = np.zeros((ci, (h - 1) * stride + 1, (wd - 1) * stride + 1), dtype=x.dtype)
    dil[:, ::stride, ::stride] = x
    flipped = w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    return conv2d(dil, np.ascontiguousarray(flipped), stride=1, pad=kh - 1 - pad)


def avg_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Average pooling with ceil-mode edges (edge cells average real pixels only)."""
    if factor == 1:
        return x
    _, h, w = x.shape
    hi = np.arange(0, h, factor)
    wi = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(x, hi, axis=1), wi, axis=2)
    h_sizes = np.minimum(hi + factor, h) - hi
    w_sizes = np.minimum(wi + factor, w) - wi
    return sums / (h_sizes[:, None] * w_sizes[None, :])


def batch_norm_eval(x, gamma, beta, running_mean, running_var):
    inv = 1.0 / np.sqrt(running_var + BN_EPS)
    return (x - running_mean[:, None, None]) * (gamma * inv)[:, None, None] + beta[:, None, None]


def instance_norm(x, gamma, beta):
    mean = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    return (x - mean) / np.sqrt(var + BN_EPS) * gamma[:, None, None] + beta[:, None, None]


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x >= 0.0, x, LEAKY_SLOPE * x)
    if kind == "tanh":
        return np.tanh(x)
    return x


def attention_pool_factor(h: int, w: int, min_res: int) -> int:
    return max(1, math.ceil(max(h, w) / min_res))


def _attention_layer(x: np.ndarray, weights: GeneratorWeights, block: str) -> np.ndarray:
    c, h, w = x.shape
    params = AttentionParams(
        w_q=weights.tensor(f"{block}.attn.wq").astype(np.float64),
        w_k=weights.tensor(f"{block}.attn.wk").astype(np.float64),
        w_v=weights.tensor(f"{block}.attn.wv").astype(np.float64),
        mu=float(weights.tensor(f"{block}.attn.mu")[0]),
    )
    factor = attention_pool_factor(h, w, weights.arch.attention_min_res)
    kv = avg_pool(x, factor) if factor > 1 else x
    out = attention_forward_kv(x.reshape(c, h * w), kv.reshape(c, -1), params)
    return out.reshape(c, h, w)


def _block_forward(
    x: np.ndarray,
    spec: ConvBlockSpec,
    weights: GeneratorWeights,
    skip_attention: bool,
) -> np.ndarray:
    w = weights.tensor(f"{spec.name}.conv.w").astype(np.float64)
    k = w.shape[-1]
    pad = 1 if k == 4 else 0
    if spec.transposed:
        y = conv_transpose2d(x, w, spec.stride, pad)
    else:
        y = conv2d(x, w, spec.stride, pad)
    if spec.norm == "none":
        y = y + weights.tensor(f"{spec.name}.conv.b").astype(np.float64)[:, None, None]
    elif spec.norm == "batch":
        y = batch_norm_eval(
            y,
            weights.tensor(f"{spec.name}.norm.gamma").astype(np.float64),
            weights.tensor(f"{spec.name}.norm.beta").astype(np.float64),
            weights.tensor(f"{spec.name}.norm.running_mean").astype(np.float64),
            weights.tensor(f"{spec.name}.norm.running_var").astype(np.float64),
        )
    else:
        y = instance_norm(
            y,
            weights.tensor(f"{spec.name}.norm.gamma").astype(np.float64),
            weights.tensor(f"{spec.name}.norm.beta").astype(np.float64),
        )
    y = _activate(y, spec.activation)
    if spec.attention and not skip_attention:
        y = _attention_layer(y, weights, spec.name)
    return y


def to_model_space(img: RgbImage) -> np.ndarray:
    """uint8 (H, W, 3) -> float (3, H, W) in [-1, 1]."""
    return img.data.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0


def from_model_space(x: np.ndarray) -> RgbImage:
    """float (3, H, W) in [-1, 1] -> uint8 image."""
    return RgbImage(round_to_u8((x.transpose(1, 2, 0) + 1.0) * 127.5))


def generator_forward_raw(
    x: np.ndarray, weights: GeneratorWeights, skip_attention: bool = False
) -> np.ndarray:
    """Generator on a (3, H, W) tensor in [-1, 1]; returns the tanh output."""
    arch = weights.arch
    _, h, w = x.shape
    div = 2**arch.depth
    if h % div or w % div or h < div or w < div:
        raise DimensionMismatchError(
            f"input {w}x{h} not divisible by 2^depth = {div}; resize first"
        )
    blocks = generator_blocks(arch)
    enc_blocks = blocks[: arch.depth]
    dec_blocks = blocks[arch.depth : -1]
    out_block = blocks[-1]

    skips = []
    cur = x
    for spec in enc_blocks:
        cur = _block_forward(cur, spec, weights, skip_attention)
        skips.append(cur)
    for j, spec in enumerate(dec_blocks, start=1):
        inp = cur if j == 1 else np.concatenate([cur, skips[arch.depth - j]], axis=0)
        cur = _block_forward(inp, spec, weights, skip_attention)
    final_in = np.concatenate([cur, skips[0]], axis=0)
    return _block_forward(final_in, out_block, weights, skip_attention)


def generator_forward(
    img: RgbImage, weights: GeneratorWeights, skip_attention: bool = False
) -> RgbImage:
    """Full-image translation: uint8 in, uint8 out, same dimensions."""
    y = generator_forward_raw(to_model_space(img), weights, skip_attention)
    return from_model_space(y)


def discriminator_forward_raw(x: np.ndarray, weights: GeneratorWeights) -> np.ndarray:
    """Patch decision logits for a (3, H, W) tensor in [-1, 1]."""
    blocks = discriminator_blocks(weights.arch)
    cur = x
    for spec in blocks:
        cur = _block_forward(cur, spec, weights, skip_attention=False)
    return cur[0]


def discriminator_forward(img: RgbImage, weights: GeneratorWeights):
    """Raw-logit decision map and its arithmetic mean."""
    logits = discriminator_forward_raw(to_model_space(img), weights)
    return logits, float(logits.mean())
