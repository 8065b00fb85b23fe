import os

import numpy as np
import pytest

from conftest import build_random_weights, make_two_stain_image, random_stain_matrix, render_stain_image, synth_concentrations
from stainnorm.cli import main
from stainnorm.imaging import read_image, write_image
from stainnorm.losses import BatchBundle, LossWeights, total_objective
from stainnorm.ssim import SsimParams
from stainnorm.weights_io import NetworkArch, save_weights, write_tensor_archive


@pytest.fixture(scope="module")
def stain_dir(tmp_path_factory):
    """Directory of three synthetic stain patches plus a target image."""
    root = tmp_path_factory.mktemp("patches")
    rng = np.random.default_rng(31)
    (root / "in").mkdir()
    for i in range(3):
        img, _, _ = make_two_stain_image(rng, 48, 48)
        write_image(img, root / "in" / f"p{i}.png")
    target, _, _ = make_two_stain_image(rng, 48, 48)
    write_image(target, root / "target.png")
    return root


class TestNormalize:
    def test_missing_target_flag_exits_1(self, stain_dir, tmp_path, capsys):
        code = main(
            ["normalize", str(stain_dir / "in"), "--method", "macenko",
             "--out", str(tmp_path / "out")]
        )
        assert code == 1
        assert "--target" in capsys.readouterr().err

    def test_missing_weights_flag_exits_1(self, stain_dir, tmp_path, capsys):
        code = main(
            ["normalize", str(stain_dir / "in"), "--method", "saasn",
             "--out", str(tmp_path / "out")]
        )
        assert code == 1
        assert "--weights" in capsys.readouterr().err

    def test_single_patch_single_output(self, stain_dir, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["normalize", str(stain_dir / "in" / "p0.png"), "--method", "macenko",
             "--target", str(stain_dir / "target.png"), "--out", str(out)]
        )
        assert code == 0
        assert (out / "p0.png").exists()

    def test_directory_of_three(self, stain_dir, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["normalize", str(stain_dir / "in"), "--method", "macenko",
             "--target", str(stain_dir / "target.png"), "--out", str(out)]
        )
        assert code == 0
        outputs = [n for n in os.listdir(out) if n.endswith(".png")]
        assert len(outputs) == 3
        manifest = (out / "manifest.csv").read_text().strip().splitlines()
        assert manifest[0] == "path,status"
        assert len(manifest) - 1 == 3

    def test_seeded_determinism_across_worker_counts(self, stain_dir, tmp_path):
        rng = np.random.default_rng(32)
        v = random_stain_matrix(rng)
        s = synth_concentrations(rng, 96 * 96)
        slide = render_stain_image(v, s, 96, 96)
        src = tmp_path / "slide.png"
        write_image(slide, src)

        digests = []
        for run, workers in (("a", 1), ("b", 4)):
            out = tmp_path / f"out_{run}"
            code = main(
                ["normalize", str(src), "--method", "vahadane",
                 "--target", str(stain_dir / "target.png"), "--out", str(out),
                 "--seed", "7", "--workers", str(workers), "--patch-size", "48"]
            )
            assert code == 0
            digests.append((out / "slide.png").read_bytes())
        assert digests[0] == digests[1]

    def test_no_partial_output_on_failure(self, stain_dir, tmp_path):
        # A white slide fails under fail-fast before any file is renamed in.
        white = np.full((48, 48, 3), 255, dtype=np.uint8)
        src = tmp_path / "white.png"
        from stainnorm.imaging import RgbImage

        write_image(RgbImage(white), src)
        out = tmp_path / "out"
        code = main(
            ["normalize", str(src), "--method", "macenko",
             "--target", str(stain_dir / "target.png"), "--out", str(out),
             "--fail-fast"]
        )
        assert code == 2
        assert not (out / "white.png").exists()
        assert not (out / "white.png.tmp").exists()


class TestEvaluate:
    def test_identical_dirs_report_one(self, stain_dir, tmp_path, capsys):
        out_csv = tmp_path / "report.csv"
        code = main(
            ["evaluate", str(stain_dir / "in"), str(stain_dir / "in"),
             "--method", "macenko", "--direction", "site1-to-site3",
             "--out", str(out_csv)]
        )
        assert code == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert printed[0] == "method,direction,mean,std,n"
        row = printed[1].split(",")
        assert row[0] == "macenko"
        assert row[1] == "site1-to-site3"
        assert float(row[2]) == 1.0
        assert float(row[3]) == 0.0
        assert int(row[4]) == 3
        assert out_csv.read_text().strip().splitlines()[1] == printed[1]

    def test_mismatched_sets_listed(self, stain_dir, tmp_path, capsys):
        other = tmp_path / "other"
        other.mkdir()
        rng = np.random.default_rng(33)
        img, _, _ = make_two_stain_image(rng, 48, 48)
        write_image(img, other / "different.png")
        code = main(["evaluate", str(stain_dir / "in"), str(other)])
        assert code == 1
        err = capsys.readouterr().err
        assert "different.png" in err and "p0.png" in err

    def test_matches_library_evaluation(self, stain_dir, capsys):
        from stainnorm.ssim import evaluate_dataset

        code = main(
            ["evaluate", str(stain_dir / "in"), str(stain_dir / "in"), "--window", "7"]
        )
        assert code == 0
        row = capsys.readouterr().out.strip().splitlines()[1].split(",")
        names = sorted(os.listdir(stain_dir / "in"))
        pairs = [
            (read_image(stain_dir / "in" / n), read_image(stain_dir / "in" / n))
            for n in names
        ]
        report = evaluate_dataset(pairs, SsimParams(window=7))
        assert abs(float(row[2]) - report.mean) < 1e-6
        assert int(row[4]) == report.n


class TestExtractStitch:
    def test_round_trip_preserves_bytes(self, tmp_path):
        rng = np.random.default_rng(34)
        img_arr = rng.integers(0, 256, size=(70, 110, 3), dtype=np.uint8)
        from stainnorm.imaging import RgbImage

        src = tmp_path / "slide.png"
        write_image(RgbImage(img_arr), src)
        patch_dir = tmp_path / "patches"
        assert main(["extract", str(src), "--out", str(patch_dir),
                     "--patch-size", "32"]) == 0
        rebuilt = tmp_path / "rebuilt.png"
        assert main(["stitch", str(patch_dir), "--out", str(rebuilt)]) == 0
        assert np.array_equal(read_image(rebuilt).data, img_arr)

    def test_patch_naming_convention(self, tmp_path):
        rng = np.random.default_rng(35)
        from stainnorm.imaging import RgbImage

        src = tmp_path / "myslide.png"
        write_image(RgbImage(rng.integers(0, 256, size=(40, 40, 3), dtype=np.uint8)), src)
        out = tmp_path / "p"
        main(["extract", str(src), "--out", str(out), "--patch-size", "20"])
        names = sorted(n for n in os.listdir(out) if n.endswith(".png"))
        assert names == [
            "myslide_0_0.png", "myslide_0_1.png", "myslide_1_0.png", "myslide_1_1.png",
        ]


class TestInfer:
    def test_round_trip_256(self, tmp_path):
        arch = NetworkArch(depth=3, base_channels=8, channel_cap=32,
                           attention_min_res=8, disc_base_channels=8)
        weights = build_random_weights(arch, seed=36)
        wpath = tmp_path / "w.saw"
        save_weights(weights, wpath)
        rng = np.random.default_rng(37)
        from stainnorm.imaging import RgbImage

        src = tmp_path / "in.png"
        write_image(RgbImage(rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)), src)
        out = tmp_path / "out.png"
        assert main(["infer", str(src), "--weights", str(wpath), "--out", str(out)]) == 0
        assert read_image(out).width == 256

    def test_bad_weight_file_exits_1(self, tmp_path, capsys):
        wpath = tmp_path / "junk.saw"
        wpath.write_bytes(b"JUNKJUNKJUNK")
        rng = np.random.default_rng(38)
        from stainnorm.imaging import RgbImage

        src = tmp_path / "in.png"
        write_image(RgbImage(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)), src)
        code = main(["infer", str(src), "--weights", str(wpath), "--out", str(tmp_path / "o.png")])
        assert code == 1
        assert "magic" in capsys.readouterr().err


class TestLossesCommand:
    def test_recompute_from_bundle_dump(self, tmp_path, capsys):
        rng = np.random.default_rng(39)
        imgs = {
            name: rng.uniform(-1, 1, size=(2, 3, 16, 16)).astype(np.float32)
            for name in ("x", "y", "fake_y", "fake_x", "cycled_x", "cycled_y", "id_x", "id_y")
        }
        scal = {
            name: rng.normal(0, 1, size=2).astype(np.float32)
            for name in ("d_y_real", "d_y_fake", "d_x_real", "d_x_fake", "d_x_on_real_y")
        }
        path = tmp_path / "bundle.saw"
        write_tensor_archive({**imgs, **scal}, path)
        code = main(["losses", "--bundle", str(path), "--adv-mode", "ls"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "adv_y,adv_x,boundary,cyc,scyc,dssim,id,total"
        bundle = BatchBundle(**{k: v.astype(np.float64) for k, v in {**imgs, **scal}.items()})
        expected = total_objective(bundle, LossWeights(), SsimParams(), "ls")
        assert abs(float(lines[1].split(",")[-1]) - expected.total) < 1e-6
