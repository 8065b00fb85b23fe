import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stainnorm.attention import (
    AttentionParams,
    attention_forward,
    attention_forward_kv,
    attention_map,
)


def random_params(rng, c, mu=None):
    c_bar = c // 8
    return AttentionParams(
        w_q=rng.standard_normal((c_bar, c)),
        w_k=rng.standard_normal((c_bar, c)),
        w_v=rng.standard_normal((c, c)),
        mu=float(rng.standard_normal()) if mu is None else mu,
    )


def dense_oracle(x, p):
    """Explicit loops over synthesized location j and attended location i."""
    c, n = x.shape
    q = [p.w_q @ x[:, j] for j in range(n)]
    k = [p.w_k @ x[:, i] for i in range(n)]
    v = [p.w_v @ x[:, i] for i in range(n)]
    out = np.zeros((c, n))
    alpha = np.zeros((n, n))
    for j in range(n):
        logits = [float(k[i] @ q[j]) for i in range(n)]
        m = max(logits)
        exps = [math.exp(l - m) for l in logits]
        z = sum(exps)
        for i in range(n):
            alpha[j, i] = exps[i] / z
        o_j = sum(alpha[j, i] * v[i] for i in range(n))
        out[:, j] = p.mu * o_j + x[:, j]
    return out, alpha


class TestForward:
    def test_mu_zero_is_identity(self):
        rng = np.random.default_rng(1)
        p = random_params(rng, 16, mu=0.0)
        x = rng.standard_normal((16, 10))
        assert np.array_equal(attention_forward(x, p), x)

    def test_single_location(self):
        rng = np.random.default_rng(2)
        p = random_params(rng, 8)
        x = rng.standard_normal((8, 1))
        out = attention_forward(x, p)
        expected = p.mu * (p.w_v @ x) + x
        assert np.allclose(out, expected, atol=1e-12)
        assert np.allclose(attention_map(x, p), 1.0)

    @pytest.mark.parametrize("c", [8, 16])
    def test_matches_dense_oracle(self, c):
        rng = np.random.default_rng(3)
        for n in range(1, 17):
            x = rng.standard_normal((c, n))
            p = random_params(rng, c)
            got = attention_forward(x, p)
            want, alpha_want = dense_oracle(x, p)
            assert np.max(np.abs(got - want)) < 1e-9
            assert np.max(np.abs(attention_map(x, p) - alpha_want)) < 1e-9

    def test_shape_and_divisibility_errors(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError):
            random_params(rng, 12)  # not a multiple of 8
        p = random_params(rng, 8)
        with pytest.raises(ValueError):
            attention_forward(rng.standard_normal((16, 4)), p)
        with pytest.raises(ValueError):
            attention_forward(rng.standard_normal((8, 4, 1)), p)

    def test_non_finite_rejected(self):
        rng = np.random.default_rng(5)
        p = random_params(rng, 8)
        x = rng.standard_normal((8, 4))
        x[0, 0] = np.nan
        with pytest.raises(ValueError):
            attention_forward(x, p)


class TestMap:
    @given(st.integers(0, 10_000), st.integers(1, 12))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one(self, seed, n):
        rng = np.random.default_rng(seed)
        p = random_params(rng, 8)
        alpha = attention_map(rng.standard_normal((8, n)), p)
        assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) < 1e-12

    def test_zero_input_gives_uniform(self):
        rng = np.random.default_rng(6)
        p = random_params(rng, 8)
        alpha = attention_map(np.zeros((8, 5)), p)
        assert np.allclose(alpha, 1.0 / 5.0, atol=1e-15)

    def test_softmax_shift_invariance(self):
        # Shifting all logits by a constant leaves the distribution unchanged:
        # scaling w_k rows so k(x) gains a constant offset per query is awkward
        # to construct, so check the underlying property directly on exp-sums.
        rng = np.random.default_rng(7)
        logits = rng.standard_normal(9)
        a = np.exp(logits - logits.max())
        b = np.exp(logits + 3.7 - (logits + 3.7).max())
        assert np.allclose(a / a.sum(), b / b.sum(), atol=1e-15)

    def test_location_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        p = random_params(rng, 16)
        x = rng.standard_normal((16, 9))
        perm = rng.permutation(9)
        out_perm = attention_forward(x[:, perm], p)
        out = attention_forward(x, p)
        assert np.allclose(out_perm, out[:, perm], atol=1e-12)


class TestPooledVariant:
    def test_square_case_reduces_to_reference(self):
        rng = np.random.default_rng(9)
        p = random_params(rng, 8)
        x = rng.standard_normal((8, 6))
        assert np.array_equal(attention_forward_kv(x, x, p), attention_forward(x, p))

    def test_kv_pool_shapes(self):
        rng = np.random.default_rng(10)
        p = random_params(rng, 8)
        x_q = rng.standard_normal((8, 12))
        x_kv = rng.standard_normal((8, 3))
        out = attention_forward_kv(x_q, x_kv, p)
        assert out.shape == (8, 12)
