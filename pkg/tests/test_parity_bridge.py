"""Cross-component parity: trainer-exported artifacts vs this engine.

The trainer (a separate package under trainer/) exports, into
``tests/data/bridge/``:

  * ``toy.saw``            weights after the toy adversarial run
  * ``identity.saw``       the identity-pretrain checkpoint (attention mu = 0)
  * ``patch_<k>.png``      8 fixed 64x64 input patches
  * ``forward_<k>.saw``    the trainer's own generator outputs (model space)
  * ``losses.csv``         per-epoch term log from the toy run
  * ``bundle_<epoch>.saw`` probe-batch dumps matching each losses.csv row

These tests verify the engines agree through the shared interfaces alone.
They skip when the artifacts have not been generated yet.
"""

import csv
import os

import numpy as np
import pytest

from stainnorm.imaging import read_image
from stainnorm.inference import generator_forward_raw, to_model_space
from stainnorm.losses import LossWeights, bundle_from_tensors, total_objective
from stainnorm.ssim import SsimParams, ssim_rgb
from stainnorm.weights_io import load_weights, read_tensor_archive
from stainnorm.wsi import PatchGrid, make_patch_normalizer, normalize_wsi

BRIDGE_DIR = os.path.join(os.path.dirname(__file__), "data", "bridge")

pytestmark = pytest.mark.skipif(
    not os.path.isdir(BRIDGE_DIR), reason="trainer bridge artifacts not generated"
)


@pytest.fixture(scope="module")
def toy_weights():
    return load_weights(os.path.join(BRIDGE_DIR, "toy.saw"))


@pytest.fixture(scope="module")
def identity_weights():
    return load_weights(os.path.join(BRIDGE_DIR, "identity.saw"))


class TestForwardParity:
    def test_generator_outputs_match_trainer(self, toy_weights):
        worst = 0.0
        for k in range(8):
            img = read_image(os.path.join(BRIDGE_DIR, f"patch_{k}.png"))
            expected = read_tensor_archive(
                os.path.join(BRIDGE_DIR, f"forward_{k}.saw")
            )["output"].astype(np.float64)
            got = generator_forward_raw(to_model_space(img), toy_weights)
            worst = max(worst, float(np.max(np.abs(got - expected))))
        assert worst <= 1e-3, f"max abs deviation {worst:.3e}"

    def test_weights_pass_spectral_check_at_load(self):
        # load_weights above already enforces the bound; reload explicitly.
        load_weights(os.path.join(BRIDGE_DIR, "toy.saw"), check_spectral=True)


class TestLossLogParity:
    def test_logged_totals_match_recomputation(self):
        path = os.path.join(BRIDGE_DIR, "losses.csv")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows, "losses.csv is empty"
        worst = 0.0
        for row in rows:
            epoch = int(row["epoch"])
            tensors = read_tensor_archive(
                os.path.join(BRIDGE_DIR, f"bundle_{epoch}.saw")
            )
            bundle = bundle_from_tensors(tensors)
            breakdown = total_objective(
                bundle, LossWeights(), SsimParams(), mode="ls"
            )
            worst = max(worst, abs(breakdown.total - float(row["total"])))
            for field in ("adv_y", "adv_x", "boundary", "cyc", "scyc", "dssim", "id"):
                worst = max(worst, abs(getattr(breakdown, field) - float(row[field])))
        assert worst <= 1e-4, f"max per-term deviation {worst:.3e}"


class TestIdentityCheckpoint:
    def test_identity_behaviour_on_slide(self, identity_weights):
        mus = [
            float(identity_weights.tensors[name][0])
            for name in identity_weights.tensors
            if name.endswith("attn.mu")
        ]
        assert mus and all(m == 0.0 for m in mus)

        slide = read_image(os.path.join(BRIDGE_DIR, "identity_slide.png"))
        norm = make_patch_normalizer("saasn", weights=identity_weights)
        grid = PatchGrid(
            source_dims=(slide.width, slide.height), patch_size=256, stride=256
        )
        out, failures = normalize_wsi(slide, norm, grid)
        assert failures == []
        score = ssim_rgb(out, slide)
        assert score > 0.95, f"identity-pipeline SSIM {score:.4f}"
