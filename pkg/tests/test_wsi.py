import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_two_stain_image, random_stain_matrix, render_stain_image, synth_concentrations
from stainnorm.errors import PatchGridError, ProcessingError
from stainnorm.imaging import RgbImage
from stainnorm.wsi import (
    PatchGrid,
    PatchRecord,
    extract_patches,
    make_patch_normalizer,
    normalize_wsi,
    seam_score,
    stitch,
)


def rand_image(rng, h, w):
    return RgbImage(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def big_stain_slide(rng, h, w, v=None):
    """A larger synthetic two-stain slide for pipeline tests."""
    if v is None:
        v = random_stain_matrix(rng)
    s = synth_concentrations(rng, h * w)
    return render_stain_image(v, s, h, w), v


class TestGrid:
    def test_counts_1000x1500(self):
        g = PatchGrid(source_dims=(1000, 1500))
        assert (g.cols, g.rows) == (2, 3)
        assert g.cols * g.rows == 6

    def test_single_patch_equals_input(self):
        rng = np.random.default_rng(1)
        img = rand_image(rng, 500, 500)
        recs = extract_patches(img, PatchGrid(source_dims=(500, 500)))
        assert len(recs) == 1
        assert np.array_equal(recs[0].image.data, img.data)

    def test_501_wide_pads_second_patch(self):
        rng = np.random.default_rng(2)
        img = rand_image(rng, 500, 501)
        g = PatchGrid(source_dims=(501, 500))
        recs = extract_patches(img, g)
        assert len(recs) == 2
        second = recs[1].image.data
        assert np.all(second[:, 1:] == 255)  # all but one column is padding

    def test_row_major_order(self):
        rng = np.random.default_rng(3)
        img = rand_image(rng, 64, 96)
        g = PatchGrid(source_dims=(96, 64), patch_size=32, stride=32)
        recs = extract_patches(img, g)
        coords = [(r.row, r.col) for r in recs]
        assert coords == [(r, c) for r in range(2) for c in range(3)]

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            PatchGrid(source_dims=(0, 10))
        with pytest.raises(ValueError):
            PatchGrid(source_dims=(10, 10), patch_size=8, stride=9)
        with pytest.raises(ValueError):
            PatchGrid(source_dims=(10, 10), stride=0)


class TestStitch:
    @given(st.integers(5, 90), st.integers(5, 90), st.integers(8, 40))
    @settings(max_examples=25, deadline=None)
    def test_extract_stitch_identity(self, h, w, patch):
        rng = np.random.default_rng(h * 1000 + w * 10 + patch)
        img = rand_image(rng, h, w)
        g = PatchGrid(source_dims=(w, h), patch_size=patch, stride=patch)
        assert np.array_equal(stitch(extract_patches(img, g), g).data, img.data)

    def test_missing_patch_names_coords(self):
        rng = np.random.default_rng(4)
        img = rand_image(rng, 64, 64)
        g = PatchGrid(source_dims=(64, 64), patch_size=32, stride=32)
        recs = extract_patches(img, g)
        dropped = [r for r in recs if (r.row, r.col) != (1, 0)]
        with pytest.raises(PatchGridError, match=r"\(1, 0\)"):
            stitch(dropped, g)

    def test_duplicate_patch_rejected(self):
        rng = np.random.default_rng(5)
        img = rand_image(rng, 64, 64)
        g = PatchGrid(source_dims=(64, 64), patch_size=32, stride=32)
        recs = extract_patches(img, g)
        with pytest.raises(PatchGridError, match="duplicate"):
            stitch(recs + [recs[0]], g)

    def test_wrong_patch_size_rejected(self):
        g = PatchGrid(source_dims=(32, 32), patch_size=32, stride=32)
        bad = PatchRecord(0, 0, 0, 0, RgbImage(np.zeros((16, 16, 3), dtype=np.uint8)))
        with pytest.raises(PatchGridError, match="expected 32x32"):
            stitch([bad], g)


class TestNormalizeWsi:
    def test_classical_shared_target(self):
        rng = np.random.default_rng(6)
        slide, _ = big_stain_slide(rng, 96, 96)
        target, _, _ = make_two_stain_image(rng, 48, 48)
        norm = make_patch_normalizer("macenko", target=target)
        g = PatchGrid(source_dims=(96, 96), patch_size=48, stride=48)
        out, failures = normalize_wsi(slide, norm, g)
        assert (out.height, out.width) == (96, 96)
        assert failures == []

    def test_worker_count_does_not_change_output(self):
        rng = np.random.default_rng(7)
        slide, _ = big_stain_slide(rng, 96, 96)
        target, _, _ = make_two_stain_image(rng, 48, 48)
        norm = make_patch_normalizer("macenko", target=target)
        g = PatchGrid(source_dims=(96, 96), patch_size=48, stride=48)
        seq, _ = normalize_wsi(slide, norm, g, workers=1)
        par, _ = normalize_wsi(slide, norm, g, workers=4)
        assert np.array_equal(seq.data, par.data)

    def test_background_patch_passes_through(self):
        rng = np.random.default_rng(8)
        slide, _ = big_stain_slide(rng, 48, 48)
        canvas = np.full((48, 96, 3), 255, dtype=np.uint8)
        canvas[:, :48] = slide.data
        img = RgbImage(canvas)
        target, _, _ = make_two_stain_image(rng, 48, 48)
        norm = make_patch_normalizer("macenko", target=target)
        g = PatchGrid(source_dims=(96, 48), patch_size=48, stride=48)
        out, failures = normalize_wsi(img, norm, g)
        assert len(failures) == 1
        assert (failures[0].row, failures[0].col) == (0, 1)
        assert np.all(out.data[:, 48:] == 255)  # untouched background half

    def test_fail_fast_raises_with_coords(self):
        rng = np.random.default_rng(9)
        img = RgbImage(np.full((48, 48, 3), 255, dtype=np.uint8))
        target, _, _ = make_two_stain_image(rng, 48, 48)
        norm = make_patch_normalizer("macenko", target=target)
        g = PatchGrid(source_dims=(48, 48), patch_size=48, stride=48)
        with pytest.raises(ProcessingError, match="row 0, col 0"):
            normalize_wsi(img, norm, g, fail_fast=True)

    def test_saasn_patch_resize_round_trip(self, small_weights):
        rng = np.random.default_rng(10)
        slide, _ = big_stain_slide(rng, 80, 80)
        norm = make_patch_normalizer("saasn", weights=small_weights)
        g = PatchGrid(source_dims=(80, 80), patch_size=40, stride=40)
        out, failures = normalize_wsi(slide, norm, g)
        assert (out.height, out.width) == (80, 80)
        assert failures == []

    def test_method_validation(self):
        with pytest.raises(ValueError):
            make_patch_normalizer("macenko")  # no target
        with pytest.raises(ValueError):
            make_patch_normalizer("saasn")  # no weights
        with pytest.raises(ValueError):
            make_patch_normalizer("reinhard")


class TestSeamScore:
    def test_constant_image_scores_zero(self):
        img = RgbImage(np.full((64, 64, 3), 128, dtype=np.uint8))
        g = PatchGrid(source_dims=(64, 64), patch_size=16, stride=16)
        assert seam_score(img, g) == 0.0

    def test_untouched_smooth_image_scores_near_zero(self):
        yy, xx = np.mgrid[0:96, 0:96]
        smooth = (127 + 60 * np.sin(xx / 9.0) * np.cos(yy / 11.0)).astype(np.uint8)
        img = RgbImage(np.stack([smooth] * 3, axis=2))
        g = PatchGrid(source_dims=(96, 96), patch_size=32, stride=32)
        interior_scale = np.abs(np.diff(smooth / 255.0, axis=1)).mean()
        assert abs(seam_score(img, g)) < 0.5 * interior_scale

    def test_checkerboard_shift_scores_positive(self):
        rng = np.random.default_rng(11)
        base = rng.integers(60, 196, size=(64, 64, 3)).astype(np.int16)
        g = PatchGrid(source_dims=(64, 64), patch_size=16, stride=16)
        shifted = base.copy()
        for row in range(4):
            for col in range(4):
                sign = 1 if (row + col) % 2 == 0 else -1
                shifted[row * 16 : (row + 1) * 16, col * 16 : (col + 1) * 16] += sign * 10
        img = RgbImage(np.clip(shifted, 0, 255).astype(np.uint8))
        assert seam_score(img, g) > 0.01

    def test_single_patch_grid_scores_zero(self):
        rng = np.random.default_rng(12)
        img = rand_image(rng, 32, 32)
        g = PatchGrid(source_dims=(32, 32), patch_size=32, stride=32)
        assert seam_score(img, g) == 0.0
