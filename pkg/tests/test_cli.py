import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from thor.cli import main
from thor.dataio import FileDataset, export_dataset
from thor.mesh import icosphere, read_obj, write_obj
from thor.synth import SynthConfig, SynthDataset
from thor.templates import load_templates


@pytest.fixture(scope="module")
def templates():
    return load_templates()


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


TINY_FLAGS = ["--steps", "3", "--train-count", "4", "--eval-count", "2", "--seed", "5"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory, runner, templates):
    out = tmp_path_factory.mktemp("cli_run")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({"shape_widths": [24, 16, 8], "shape_blocks": 1,
                               "pose_d_model": 16, "pose_blocks": 1}))
    result = runner.invoke(main, ["train", "--config", str(cfg), *TINY_FLAGS,
                                  "--out", str(out / "run")])
    assert result.exit_code == 0, result.output
    return out / "run"


class TestTrainCommand:
    def test_outputs_exist(self, trained):
        assert (trained / "checkpoints" / "final" / "manifest.json").exists()
        assert (trained / "logs" / "run.jsonl").exists()
        assert (trained / "logs" / "loss_curve.png").exists()
        assert (trained / "metrics" / "report.json").exists()
        assert (trained / "metrics" / "report_pcv.csv").exists()
        assert (trained / "metrics" / "pcv_curve.png").exists()

    def test_config_error_exit_code(self, runner):
        result = runner.invoke(main, ["train", "--hands", "1", "--steps", "-3"])
        assert result.exit_code == 2

    def test_unknown_config_key_exit_code(self, runner, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"made_up": True}))
        result = runner.invoke(main, ["train", "--config", str(cfg)])
        assert result.exit_code == 2


class TestEvalCommand:
    def test_eval_writes_reports(self, runner, trained, tmp_path):
        out = tmp_path / "eval"
        result = runner.invoke(main, ["eval", "--checkpoint",
                                      str(trained / "checkpoints" / "final"),
                                      "--out", str(out), "--count", "2"])
        assert result.exit_code == 0, result.output
        assert (out / "metrics" / "report.json").exists()
        assert (out / "metrics" / "report_pcv.csv").exists()
        assert (out / "metrics" / "pcv_curve.png").exists()
        report = json.loads((out / "metrics" / "report.json").read_text())
        overall = report["vertex_error"]["overall"]
        aligned = report["vertex_error_aligned"]["overall"]
        assert aligned <= overall + 1e-12

    def test_layout_mismatch_exit_code(self, runner, trained):
        result = runner.invoke(main, ["eval", "--checkpoint",
                                      str(trained / "checkpoints" / "final"),
                                      "--hands", "2"])
        assert result.exit_code == 2


class TestInferCommand:
    @pytest.fixture(scope="class")
    def manifest(self, tmp_path_factory, templates):
        ds = SynthDataset(9, SynthConfig(hands=1), 2, templates)
        directory = tmp_path_factory.mktemp("data")
        return export_dataset(ds, directory)

    def test_infer_writes_obj_and_pose(self, runner, trained, manifest, tmp_path):
        out = tmp_path / "infer"
        result = runner.invoke(main, ["infer", "--checkpoint",
                                      str(trained / "checkpoints" / "final"),
                                      "--data", str(manifest), "--out", str(out)])
        assert result.exit_code == 0, result.output
        meshes = out / "meshes"
        assert (meshes / "sample00000_hand.obj").exists()
        assert (meshes / "sample00000_object.obj").exists()
        pose = json.loads((meshes / "sample00000_pose.json").read_text())
        assert len(pose["pose_3d"]) == 29
        hand = read_obj(meshes / "sample00000_hand.obj")
        assert hand.num_vertices == 778

    def test_infer_deterministic(self, runner, trained, manifest, tmp_path):
        outs = []
        for name in ("i1", "i2"):
            out = tmp_path / name
            result = runner.invoke(main, ["infer", "--checkpoint",
                                          str(trained / "checkpoints" / "final"),
                                          "--data", str(manifest), "--out", str(out),
                                          "--limit", "1"])
            assert result.exit_code == 0
            outs.append((out / "meshes" / "sample00000_hand.obj").read_bytes())
        assert outs[0] == outs[1]


class TestMeshCommands:
    def test_icosphere_level4_count(self, runner, tmp_path):
        out = tmp_path / "sphere.obj"
        result = runner.invoke(main, ["mesh", "icosphere", "--level", "4",
                                      "--out", str(out)])
        assert result.exit_code == 0
        assert "2562 vertices" in result.output

    def test_simplify_to_exact_count(self, runner, tmp_path):
        src = tmp_path / "in.obj"
        write_obj(src, icosphere(2))
        out = tmp_path / "out.obj"
        result = runner.invoke(main, ["mesh", "simplify", str(src),
                                      "--target-v", "42", "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert read_obj(out).num_vertices == 42

    def test_deform_emits_history_and_figure(self, runner, tmp_path):
        from thor.mesh import cube_mesh
        target = tmp_path / "cube.obj"
        write_obj(target, cube_mesh(1.0))
        template = tmp_path / "tpl.obj"
        write_obj(template, icosphere(2))
        out = tmp_path / "deformed.obj"
        result = runner.invoke(main, ["mesh", "deform", "--target", str(target),
                                      "--template", str(template),
                                      "--iters", "40", "--samples", "400",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert out.with_suffix(".history.csv").exists()
        assert out.with_suffix(".history.png").exists()

    def test_missing_input_exit_code(self, runner, tmp_path):
        result = runner.invoke(main, ["mesh", "simplify", str(tmp_path / "nope.obj"),
                                      "--target-v", "10"])
        assert result.exit_code == 2  # click validates the path itself


class TestFileDataset:
    def test_round_trip_features(self, templates, tmp_path):
        ds = SynthDataset(4, SynthConfig(hands=1), 2, templates)
        manifest = export_dataset(ds, tmp_path / "d")
        back = FileDataset(manifest)
        assert len(back) == 2
        a = ds.features(0, "heatmap")
        b = back.features(0, "heatmap")
        assert np.array_equal(a, b)
        assert np.array_equal(ds.sample(0).gt_mesh_vertices,
                              back.sample(0).gt_mesh_vertices)

    def test_missing_gt_detected(self, templates, tmp_path):
        from thor.dataio import DataError
        ds = SynthDataset(4, SynthConfig(hands=1), 1, templates)
        manifest = export_dataset(ds, tmp_path / "nogt", include_gt=False)
        back = FileDataset(manifest)
        with pytest.raises(DataError):
            back.require_ground_truth()
