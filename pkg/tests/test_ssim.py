import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stainnorm.errors import DimensionMismatchError
from stainnorm.imaging import GrayImage, RgbImage
from stainnorm.ssim import (
    MetricReport,
    SsimParams,
    dssim,
    evaluate_dataset,
    ssim,
    ssim_rgb,
    window_kernel,
)


def naive_ssim_oracle(a: np.ndarray, b: np.ndarray, p: SsimParams) -> float:
    """Direct double-loop evaluation of the windowed index."""
    kernel = window_kernel(p)
    n = p.window
    h, w = a.shape
    values = []
    for i in range(0, h - n + 1, p.stride):
        for j in range(0, w - n + 1, p.stride):
            wa = a[i : i + n, j : j + n]
            wb = b[i : i + n, j : j + n]
            mu_a = float(np.sum(kernel * wa))
            mu_b = float(np.sum(kernel * wb))
            var_a = float(np.sum(kernel * (wa - mu_a) ** 2))
            var_b = float(np.sum(kernel * (wb - mu_b) ** 2))
            cov = float(np.sum(kernel * (wa - mu_a) * (wb - mu_b)))
            num = (2 * mu_a * mu_b + p.c1) * (2 * cov + p.c2)
            den = (mu_a**2 + mu_b**2 + p.c1) * (var_a + var_b + p.c2)
            values.append(num / den)
    return float(np.mean(values))


def rand_gray(rng, h, w):
    return GrayImage(rng.uniform(0, 1, size=(h, w)))


class TestSsimCore:
    def test_self_similarity_is_exactly_one(self):
        rng = np.random.default_rng(1)
        img = rand_gray(rng, 16, 16)
        assert ssim(img, img) == 1.0

    def test_two_equal_constants(self):
        a = GrayImage(np.full((12, 12), 0.4))
        b = GrayImage(np.full((12, 12), 0.4))
        assert ssim(a, b) == 1.0

    @pytest.mark.parametrize("weights", ["uniform", "gaussian"])
    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_matches_naive_oracle(self, weights, stride):
        rng = np.random.default_rng(42)
        p = SsimParams(window=7, window_weights=weights, stride=stride)
        a = rng.uniform(0, 1, size=(16, 16))
        b = np.clip(a + rng.normal(0, 0.2, size=(16, 16)), 0, 1)
        got = ssim(GrayImage(a), GrayImage(b), p)
        want = naive_ssim_oracle(a, b, p)
        assert abs(got - want) < 1e-9

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(DimensionMismatchError):
            ssim(rand_gray(rng, 12, 12), rand_gray(rng, 12, 13))

    def test_window_larger_than_image(self):
        rng = np.random.default_rng(3)
        with pytest.raises(DimensionMismatchError):
            ssim(rand_gray(rng, 8, 8), rand_gray(rng, 8, 8), SsimParams(window=11))

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_and_bounds(self, seed):
        rng = np.random.default_rng(seed)
        p = SsimParams(window=5)
        a, b = rand_gray(rng, 11, 13), rand_gray(rng, 11, 13)
        ab = ssim(a, b, p)
        ba = ssim(b, a, p)
        assert abs(ab - ba) < 1e-12
        assert -1.0 - 1e-12 <= ab <= 1.0 + 1e-12

    def test_noise_ladder_monotone_toward_one(self):
        rng = np.random.default_rng(9)
        base = rng.uniform(0.2, 0.8, size=(20, 20))
        scores = []
        for eps in (0.2, 0.05, 0.01, 0.001, 0.0):
            noisy = np.clip(base + rng.uniform(-eps, eps, size=base.shape), 0, 1)
            scores.append(ssim(GrayImage(base), GrayImage(noisy)))
        assert scores == sorted(scores)
        assert scores[-1] == 1.0

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SsimParams(window=4)
        with pytest.raises(ValueError):
            SsimParams(window=1)
        with pytest.raises(ValueError):
            SsimParams(stride=0)
        with pytest.raises(ValueError):
            SsimParams(c1=0)


class TestSsimRgb:
    def test_identical_rgb(self):
        rng = np.random.default_rng(4)
        img = RgbImage(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
        assert ssim_rgb(img, img) == 1.0

    def test_luma_preserving_channel_swap(self):
        # Swap R and B wherever R == B: grayscale unchanged, so SSIM is 1.
        rng = np.random.default_rng(5)
        base = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        base[:, :, 2] = base[:, :, 0]
        swapped = base[:, :, [2, 1, 0]]
        assert ssim_rgb(RgbImage(base), RgbImage(swapped.copy())) == 1.0

    def test_differs_from_per_channel_mean(self):
        rng = np.random.default_rng(6)
        a = RgbImage(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
        b = RgbImage(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
        p = SsimParams(window=7)
        luma_score = ssim_rgb(a, b, p)
        per_channel = np.mean(
            [
                ssim(
                    GrayImage(a.data[:, :, c] / 255.0),
                    GrayImage(b.data[:, :, c] / 255.0),
                    p,
                )
                for c in range(3)
            ]
        )
        # Grayscale-first is not per-channel-mean; the two disagree in general.
        assert abs(luma_score - per_channel) > 1e-6


class TestDssim:
    def test_zero_for_identical(self):
        rng = np.random.default_rng(7)
        img = RgbImage(rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8))
        assert dssim(img, img) == 0.0

    def test_formula_bounds(self):
        # dssim = (1 - s)/2 maps s = -1 to 1 and s = 1 to 0.
        assert (1.0 - (-1.0)) / 2.0 == 1.0
        rng = np.random.default_rng(8)
        a = RgbImage(rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8))
        b = RgbImage(rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8))
        p = SsimParams(window=5)
        assert abs(dssim(a, b, p) - (1.0 - ssim_rgb(a, b, p)) / 2.0) < 1e-15
        assert 0.0 <= dssim(a, b, p) <= 1.0


class TestEvaluateDataset:
    def test_single_identical_pair(self):
        rng = np.random.default_rng(10)
        img = RgbImage(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
        report = evaluate_dataset([(img, img)])
        assert report.mean == 1.0
        assert report.std == 0.0
        assert report.n == 1

    def test_three_pairs_hand_aggregated(self):
        rng = np.random.default_rng(11)
        p = SsimParams(window=7)
        pairs = []
        scores = []
        for _ in range(3):
            a = RgbImage(rng.integers(0, 256, size=(14, 14, 3), dtype=np.uint8))
            b = RgbImage(rng.integers(0, 256, size=(14, 14, 3), dtype=np.uint8))
            pairs.append((a, b))
            scores.append(ssim_rgb(a, b, p))
        report = evaluate_dataset(pairs, p)
        assert abs(report.mean - np.mean(scores)) < 1e-12
        assert abs(report.std - np.std(scores)) < 1e-12  # population std
        assert report.n == 3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evaluate_dataset([])

    def test_report_invariants(self):
        with pytest.raises(ValueError):
            MetricReport(mean=0.5, std=-0.1, n=1)
        with pytest.raises(ValueError):
            MetricReport(mean=1.5, std=0.0, n=1)
        with pytest.raises(ValueError):
            MetricReport(mean=0.5, std=0.1, n=0)
