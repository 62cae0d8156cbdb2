import json

import numpy as np
import pytest
from PIL import Image

from saanet.checkpoint import read_checkpoint, save_checkpoint
from saanet.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from saanet.datagen import PatchPair, synthetic_pairs, write_packed_pairs
from saanet.network import NetworkConfig, build_network


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    monkeypatch.setenv("SAANET_HOME", str(tmp_path / "home"))


def run(*argv):
    return main([str(a) for a in argv])


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture
def tiny_checkpoint(tmp_path):
    path = tmp_path / "tiny.npz"
    cfg = NetworkConfig(alpha_a=4, base_channels=8)
    save_checkpoint(path, build_network(cfg, seed=0), model_kind="saanet", config=cfg.to_dict())
    return path


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert run("gen-synthetic", "--count", 2, "--out", out, "-q") == 0
    return out


class TestGenSynthetic:
    def test_single_scene(self, tmp_path):
        out = tmp_path / "one"
        assert run("gen-synthetic", "--count", 1, "--disparities", "2", "--out", out, "-q") == EXIT_OK
        scene = out / "scene_0000"
        assert len(list(scene.glob("view_*.png"))) == 17
        disp = np.load(scene / "disparity.npy")
        assert disp.shape == (64, 24, 17) and np.all(disp == 2.0)
        m = manifest(out)
        assert m["command"] == "gen-synthetic" and m["seed"] == 0 and m["version"]

    def test_same_seed_bit_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run("gen-synthetic", "--count", 3, "--seed", 5, "--out", tmp_path / name, "-q") == 0
        for f in sorted((tmp_path / "a").rglob("*.png")):
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_spec_file(self, tmp_path):
        spec = {"layers": [{"seed": 1, "disparity": 1.0}], "spatial_res": [32, 8], "angular_res": 5}
        (tmp_path / "spec.json").write_text(json.dumps(spec))
        assert run("gen-synthetic", "--spec", tmp_path / "spec.json", "--out", tmp_path / "s", "-q") == 0
        assert len(list((tmp_path / "s" / "scene_0000").glob("view_*.png"))) == 5

    def test_default_output_under_home(self, tmp_path):
        assert run("gen-synthetic", "-q") == 0
        assert (tmp_path / "home" / "runs" / "gen-synthetic" / "manifest.json").exists()


class TestTrain:
    def test_zero_steps_writes_initial_checkpoint(self, tmp_path):
        out = tmp_path / "t"
        assert run("train", "--max-steps", 0, "--lambda-feat", "0,0,0", "--out", out, "-q") == 0
        meta, params = read_checkpoint(out / "final.npz")
        assert meta["step"] == 0 and "Conv1_1.weight" in params
        cfg = manifest(out)["config"]
        assert cfg["learning_rate"] == 1e-4 and cfg["batch_size"] == 28 and cfg["init_std"] == 1e-3

    def test_missing_autoencoder_is_config_error(self, tmp_path, dataset):
        assert run("train", "--data", dataset, "--max-steps", 1, "--out", tmp_path / "t", "-q") == EXIT_CONFIG

    def test_short_run_from_scenes(self, tmp_path, dataset):
        out = tmp_path / "t"
        cfg = tmp_path / "run.cfg"
        cfg.write_text("base_channels = 8\nbatch_size = 2\nlog_every = 1\nlambda_feat = 0, 0, 0\n")
        assert run("train", "--data", dataset, "--config", cfg, "--max-steps", 2, "--out", out, "-q") == 0
        assert (out / "loss.csv").read_text().startswith("step,l_pix,l_feat,l_total")
        assert (out / "loss.png").stat().st_size > 0
        m = manifest(out)
        assert m["config"]["max_steps"] == 2 and m["config"]["base_channels"] == 8
        # the manifest alone reproduces the run
        again = tmp_path / "again"
        assert run("train", "--data", dataset, "--config", out / "manifest.json", "--out", again, "-q") == 0
        assert (out / "loss.csv").read_text() == (again / "loss.csv").read_text()

    def test_with_autoencoder(self, tmp_path, dataset):
        ae_out = tmp_path / "ae"
        assert run("train-ae", "--data", dataset, "--steps", 2, "--out", ae_out, "-q") == 0
        assert (ae_out / "autoencoder.npz").exists() and (ae_out / "ae_loss.csv").exists()
        cfg = tmp_path / "run.cfg"
        cfg.write_text("base_channels = 8\nbatch_size = 2\nlog_every = 1\n")
        out = tmp_path / "t"
        assert run("train", "--data", dataset, "--config", cfg, "--ae", ae_out / "autoencoder.npz",
                   "--max-steps", 1, "--out", out, "-q") == 0
        rows = (out / "loss.csv").read_text().splitlines()
        assert float(rows[1].split(",")[2]) > 0

    def test_numerical_abort_exit_code(self, tmp_path):
        pairs = synthetic_pairs(2)
        bad = pairs[0].target.copy()
        bad[0, 0, 0] = np.nan
        pairs[0] = PatchPair(pairs[0].input, bad, {})
        write_packed_pairs(pairs, tmp_path / "bad.bin", alpha_a=4)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("base_channels = 8\nbatch_size = 2\nlambda_feat = 0,0,0\n")
        code = run("train", "--data", tmp_path / "bad.bin", "--config", cfg, "--max-steps", 3,
                   "--out", tmp_path / "t", "-q")
        assert code == EXIT_NUMERICAL

    def test_bad_config_value(self, tmp_path):
        (tmp_path / "x.cfg").write_text("batch_size = lots\n")
        assert run("train", "--config", tmp_path / "x.cfg", "--max-steps", 0, "--out", tmp_path / "t", "-q") == 2


class TestReconstruct:
    def test_factor_sixteen_cascades(self, tmp_path, tiny_checkpoint):
        src = tmp_path / "src"
        assert run("gen-synthetic", "--views", 7, "--width", 16, "--height", 8, "--out", src, "-q") == 0
        out = tmp_path / "r"
        assert run("reconstruct", "--checkpoint", tiny_checkpoint, "--input", src / "scene_0000",
                   "--factor", 16, "--out", out, "-q") == 0
        meta = json.loads((out / "views" / "meta.json").read_text())
        assert (meta["S"], meta["T"]) == (97, 1)
        assert manifest(out)["details"]["passes"] == 2

    def test_inexpressible_factor(self, tmp_path, tiny_checkpoint, dataset, capsys):
        code = run("reconstruct", "--checkpoint", tiny_checkpoint, "--input", dataset / "scene_0000",
                   "--factor", 8, "--out", tmp_path / "r")
        assert code == EXIT_CONFIG
        assert "4, 16" in capsys.readouterr().err

    def test_attention_dump(self, tmp_path, tiny_checkpoint):
        src = tmp_path / "src"
        assert run("gen-synthetic", "--views", 3, "--width", 16, "--height", 8, "--out", src, "-q") == 0
        out = tmp_path / "r"
        assert run("reconstruct", "--checkpoint", tiny_checkpoint, "--input", src / "scene_0000", "--factor", 4,
                   "--attn-dump", "--tile-width", 8, "--overlap", 4, "--out", out, "-q") == 0
        pngs = sorted((out / "attention").glob("attn_plane*_s??_s??.png"))
        assert len(pngs) == 9
        img = np.asarray(Image.open(pngs[0]))
        assert img.dtype == np.uint8 and img.shape == (4, 4)
        assert np.all(img.max(axis=1) == 255)
        tiling = manifest(out)["details"]["tiling"]
        assert tiling["tile_width"] == 8 and tiling["tiles_per_row_slice"] == 3

    def test_attn_dump_command(self, tmp_path, tiny_checkpoint, dataset):
        out = tmp_path / "a"
        assert run("attn-dump", "--checkpoint", tiny_checkpoint, "--input", dataset / "scene_0000",
                   "--out", out, "-q") == 0
        assert len(list(out.glob("attn_plane*_s??_s??.png"))) == 17 * 17


class TestEval:
    def test_ground_truth_sanity(self, tmp_path, dataset, capsys):
        out = tmp_path / "e"
        assert run("eval", "--ground-truth", "--data", dataset, "--factor", 4, "--out", out, "-q") == 0
        report = json.loads((out / "report.json").read_text())
        assert report["avg_psnr"] == 100.0 and report["avg_ssim"] == pytest.approx(1.0)
        assert {"views", "psnr", "ssim", "excluded", "avg_psnr", "avg_ssim"} <= set(report)
        assert report["excluded"] == [0, 4, 8, 12, 16]
        assert "avg" in capsys.readouterr().out

    def test_model_with_baselines(self, tmp_path, dataset, tiny_checkpoint):
        out = tmp_path / "e"
        assert run("eval", "--checkpoint", tiny_checkpoint, "--data", dataset, "--with-baselines",
                   "--out", out, "-q") == 0
        header = (out / "report.csv").read_text().splitlines()[0]
        assert header == "view,psnr,ssim,nearest_psnr,nearest_ssim,linear_psnr,linear_ssim"
        assert (out / "per_view.png").exists() and (out / "epi.png").exists()
        assert len(list((out / "scenes").glob("*.json"))) == 2
        assert set(manifest(out)["details"]["baselines"]) == {"nearest", "linear"}

    def test_needs_checkpoint(self, tmp_path, dataset):
        assert run("eval", "--data", dataset, "--out", tmp_path / "e", "-q") == EXIT_CONFIG
