"""Self-attention block forward pass as a standalone numerical kernel.

Features ``x`` of shape (c, n) are projected to queries/keys (c/8 channels)
and values (c channels); the attention weight on location i while synthesizing
location j is a softmax over i of ``k_i . q_j``, and the block output is
``mu * o + x`` with ``o_j = sum_i alpha[j, i] * v_i``.  A key/value input
distinct from the query input supports pooled attention at large feature
maps; the square case is the reference semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNEL_REDUCTION = 8


def _check_tensor(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class AttentionParams:
    """Projection matrices w_q, w_k of shape (c/8, c), w_v of shape (c, c),
    and the residual scale mu (learnable, starts at 0 in training)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    mu: float

    def __post_init__(self):
        w_q = _check_tensor(self.w_q, "w_q")
        w_k = _check_tensor(self.w_k, "w_k")
        w_v = _check_tensor(self.w_v, "w_v")
        if w_v.ndim != 2 or w_v.shape[0] != w_v.shape[1]:
            raise ValueError(f"w_v must be square (c, c), got {w_v.shape}")
        c = w_v.shape[0]
        if c < CHANNEL_REDUCTION or c % CHANNEL_REDUCTION != 0:
            raise ValueError(f"channel count {c} must be a positive multiple of 8")
        c_bar = c // CHANNEL_REDUCTION
        for name, w in (("w_q", w_q), ("w_k", w_k)):
            if w.shape != (c_bar, c):
                raise ValueError(f"{name} must have shape ({c_bar}, {c}), got {w.shape}")
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")
        object.__setattr__(self, "w_q", w_q)
        object.__setattr__(self, "w_k", w_k)
        object.__setattr__(self, "w_v", w_v)

    @property
    def channels(self) -> int:
        return self.w_v.shape[0]


def _check_input(x: np.ndarray, p: AttentionParams, name: str = "x") -> np.ndarray:
    arr = _check_tensor(x, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (channels, locations), got {arr.shape}")
    if arr.shape[0] != p.channels:
        raise ValueError(
            f"{name} has {arr.shape[0]} channels but params expect {p.channels}"
        )
    if arr.shape[1] < 1:
        raise ValueError(f"{name} needs at least one location")
    return arr


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def attention_map_kv(x_q: np.ndarray, x_kv: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Attention weights, shape (n_q, n_kv); row j sums to 1 over the attended i."""
    xq = _check_input(x_q, p, "x_q")
    xkv = _check_input(x_kv, p, "x_kv")
    q = p.w_q @ xq  # (c_bar, n_q)
    k = p.w_k @ xkv  # (c_bar, n_kv)
    logits = q.T @ k  # logits[j, i] = k_i . q_j
    return _softmax_rows(logits)


def attention_forward_kv(x_q: np.ndarray, x_kv: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Residual attention output mu * o + x_q with keys/values taken from x_kv."""
    alpha = attention_map_kv(x_q, x_kv, p)
    v = p.w_v @ _check_input(x_kv, p, "x_kv")  # (c, n_kv)
    o = v @ alpha.T  # (c, n_q)
    return p.mu * o + np.asarray(x_q, dtype=np.float64)


def attention_map(x: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Square-case attention weights over the locations of x."""
    return attention_map_kv(x, x, p)


def attention_forward(x: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Self-attention block output for features x of shape (c, n)."""
    return attention_forward_kv(x, x, p)
