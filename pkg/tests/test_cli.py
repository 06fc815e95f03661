"""End-to-end CLI coverage on tiny datasets: every command, the report
artifacts, exit codes, and machine-readable errors."""

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from ngsplat.cli import EXIT_CODES, main

TINY = {
    "iterations": 30,
    "noise_start_iteration": 10,
    "noise_finetune_iterations": 5,
    "voxel_levels": [6, 12],
    "erosion_iterations": 1,
    "densify_start_iteration": 5,
    "densify_interval": 10,
    "n_init_points": 500,
    "log_every": 10,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A synth dataset plus a trained asset, shared across the module."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    data = root / "data"
    r = runner.invoke(
        main, ["synth", "--kind", "opaque_sphere", "--views", "8",
               "--res", "24x24", "--seed", "3", "--out", str(data)],
        catch_exceptions=False,
    )
    assert r.exit_code == 0, r.output
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    asset = root / "asset"
    r = runner.invoke(
        main, ["train", "--data", str(data), "--out", str(asset),
               "--config", str(cfg), "--seed", "3"],
        catch_exceptions=False,
    )
    assert r.exit_code == 0, r.output
    return dict(root=root, data=data, cfg=cfg, asset=asset, runner=runner)


class TestSynth:
    def test_layout(self, workspace):
        data = workspace["data"]
        assert (data / "cameras.json").exists()
        assert len(list((data / "images").glob("*.png"))) == 8
        assert len(list((data / "masks").glob("*.png"))) == 8

    def test_bad_res_exit_code(self, workspace):
        r = workspace["runner"].invoke(
            main, ["synth", "--kind", "opaque_sphere", "--res", "nope",
                   "--out", str(workspace["root"] / "x")])
        assert r.exit_code == EXIT_CODES["invalid-parameter"]

    def test_unknown_kind_rejected(self, workspace):
        r = workspace["runner"].invoke(
            main, ["synth", "--kind", "cube_of_cheese",
                   "--out", str(workspace["root"] / "x")])
        assert r.exit_code == 2  # click's own usage error


class TestTrain:
    def test_asset_files(self, workspace):
        asset = workspace["asset"]
        assert (asset / "surface.ply").exists()
        assert (asset / "infill.ply").exists()
        assert (asset / "meta.json").exists()
        assert (asset / "train_log.jsonl").exists()
        assert (asset / "training_curves.png").exists()
        meta = json.loads((asset / "meta.json").read_text())
        assert meta["seed"] == 3

    def test_ngs_off_omits_infill(self, workspace):
        out = workspace["root"] / "asset_off"
        r = workspace["runner"].invoke(
            main, ["train", "--data", str(workspace["data"]), "--out", str(out),
                   "--config", str(workspace["cfg"]), "--ngs", "off"],
            catch_exceptions=False)
        assert r.exit_code == 0
        assert (out / "surface.ply").exists()
        assert not (out / "infill.ply").exists()

    def test_missing_dataset_error_is_machine_readable(self, workspace):
        bad = workspace["root"] / "empty_dir"
        bad.mkdir(exist_ok=True)
        r = workspace["runner"].invoke(
            main, ["train", "--data", str(bad),
                   "--out", str(workspace["root"] / "y")])
        assert r.exit_code == EXIT_CODES["dataset"]
        err = json.loads(r.stderr.strip().splitlines()[-1])
        assert err["error"] == "dataset"
        assert err["message"]

    def test_same_seed_reproduces_ply_bytes(self, workspace):
        outs = []
        for name in ("rep_a", "rep_b"):
            out = workspace["root"] / name
            r = workspace["runner"].invoke(
                main, ["train", "--data", str(workspace["data"]), "--out", str(out),
                       "--config", str(workspace["cfg"]), "--seed", "11"],
                catch_exceptions=False)
            assert r.exit_code == 0
            outs.append(out)
        a, b = outs
        assert (a / "surface.ply").read_bytes() == (b / "surface.ply").read_bytes()
        assert (a / "infill.ply").read_bytes() == (b / "infill.ply").read_bytes()


class TestInfill:
    def test_writes_noise_ply(self, workspace):
        out = workspace["root"] / "noise.ply"
        r = workspace["runner"].invoke(
            main, ["infill", "--surface", str(workspace["asset"] / "surface.ply"),
                   "--data", str(workspace["data"]), "--out", str(out),
                   "--config", str(workspace["cfg"]), "--seed", "3"],
            catch_exceptions=False)
        assert r.exit_code == 0, r.output
        assert out.exists()

    def test_corrupt_ply_exit_code(self, workspace):
        bad = workspace["root"] / "bad.ply"
        bad.write_bytes(b"not a ply at all\n")
        r = workspace["runner"].invoke(
            main, ["infill", "--surface", str(bad),
                   "--data", str(workspace["data"]),
                   "--out", str(workspace["root"] / "z.ply")])
        assert r.exit_code == EXIT_CODES["ply-header"]
        err = json.loads(r.stderr.strip().splitlines()[-1])
        assert err["error"].startswith("ply-")


class TestAudit:
    def test_report_and_figures(self, workspace):
        out = workspace["root"] / "audit"
        r = workspace["runner"].invoke(
            main, ["audit", "--surface", str(workspace["asset"] / "surface.ply"),
                   "--infill", str(workspace["asset"] / "infill.ply"),
                   "--data", str(workspace["data"]), "--out", str(out)],
            catch_exceptions=False)
        assert r.exit_code == 0, r.output
        summary = json.loads(r.output.strip().splitlines()[-1])
        assert 0.0 <= summary["mean_sos"] <= 1.0
        assert (out / "report.jsonl").exists()
        assert (out / "metrics.png").exists()
        assert list(out.glob("transmittance_*.png"))
        lines = [json.loads(l) for l in (out / "report.jsonl").read_text().splitlines()]
        assert lines[-1]["record"] == "aggregate"
        assert all(l["record"] == "view" for l in lines[:-1])


class TestRender:
    def test_renders_all_views(self, workspace):
        out = workspace["root"] / "frames"
        r = workspace["runner"].invoke(
            main, ["render", "--surface", str(workspace["asset"] / "surface.ply"),
                   "--infill", str(workspace["asset"] / "infill.ply"),
                   "--recolor-surface", "ff0000", "--recolor-infill", "00ff00",
                   "--data", str(workspace["data"]), "--out", str(out)],
            catch_exceptions=False)
        assert r.exit_code == 0, r.output
        assert len(list(out.glob("*.png"))) == 8

    def test_bad_hex_color(self, workspace):
        r = workspace["runner"].invoke(
            main, ["render", "--surface", str(workspace["asset"] / "surface.ply"),
                   "--recolor-surface", "xyz",
                   "--data", str(workspace["data"]),
                   "--out", str(workspace["root"] / "f2")])
        assert r.exit_code == EXIT_CODES["invalid-parameter"]


class TestEval:
    def test_report_jsonl_and_figure(self, workspace):
        out = workspace["root"] / "eval.jsonl"
        r = workspace["runner"].invoke(
            main, ["eval", "--surface", str(workspace["asset"] / "surface.ply"),
                   "--infill", str(workspace["asset"] / "infill.ply"),
                   "--data", str(workspace["data"]), "--out", str(out)],
            catch_exceptions=False)
        assert r.exit_code == 0, r.output
        agg = json.loads(r.output.strip().splitlines()[-1])
        assert "mean_psnr" in agg and "mean_sos" in agg
        assert out.exists()
        assert out.with_suffix(".png").exists()


class TestAblationFlags:
    def test_each_ablation_flag_accepted(self, workspace):
        # smoke: flags parse and map onto the config without error
        for name in ("erosion", "pruning", "lf", "lr-reset", "color-reset", "random-bg"):
            out = workspace["root"] / f"ab_{name}"
            r = workspace["runner"].invoke(
                main, ["train", "--data", str(workspace["data"]), "--out", str(out),
                       "--config", str(workspace["cfg"]), "--ablate", name],
                catch_exceptions=False)
            assert r.exit_code == 0, (name, r.output)
