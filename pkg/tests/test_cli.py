"""End-to-end CLI smoke run, exit codes, and workspace overrides."""

from __future__ import annotations

import shutil

import pytest

from stagematte import raster
from stagematte.cli import main
from stagematte.stage import DatasetManifest

CONFIG = """\
workspace: ws
seed: 9
dataset:
  width: 16
  height: 16
  counts: {base: 4, capture_stage: 2, unlabeled: 1, validation: 1}
train_base:
  iterations: 3
  batch_size: 2
  lr_drop_iteration: 2
  seed: 1
finetune:
  iterations: 3
  batch_size: 2
  base_fraction: 0.5
  seed: 2
student:
  iterations: 3
  batch_size: 2
  base_fraction: 0.5
  lr_initial: 0.001
  lr_after: 0.0005
  student_epochs_coarse: 1
  student_epochs_joint: 1
  seed: 3
qc:
  band_radius: 1
  thresholds: {mse: 10.0}
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the whole command chain once and share the resulting workspace."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "pipeline.yaml"
    cfg.write_text(CONFIG)
    c = str(cfg)
    ws = root / "ws"

    assert main(["gen-data", "--config", c]) == 0
    assert main(["train-base", "--config", c]) == 0
    teacher = str(ws / "checkpoints/teacher_base.ckpt")
    assert main(["finetune-teacher", "--config", c, "--checkpoint", teacher]) == 0
    refined = str(ws / "checkpoints/teacher_refined.ckpt")
    assert main(["distill", "--config", c, "--checkpoint", refined]) == 0
    assert main(["finetune-student-direct", "--config", c]) == 0
    student = str(ws / "checkpoints/student_direct.ckpt")
    assert main(["finetune-student", "--config", c, "--checkpoint", student]) == 0
    assert main(["predict", "--config", c, "--checkpoint", refined,
                 "--split", "validation", "--out", str(root / "preds")]) == 0
    assert main(["export-review", "--config", c, "--split", "validation",
                 "--pred", str(root / "preds"), "--out", str(root / "review")]) == 0
    return root, cfg, ws


class TestSmokeRun:
    def test_all_artifacts_exist(self, pipeline):
        root, _, ws = pipeline
        for name in ("teacher_base", "teacher_refined", "student_distilled",
                     "student_direct"):
            assert (ws / f"checkpoints/{name}.ckpt").exists(), name
            assert (ws / f"checkpoints/{name}.log").exists(), name
        manifest = DatasetManifest.load(ws / "manifest.jsonl")
        assert len(manifest.records) == 8
        assert all(r.pseudo_label for r in manifest.split("unlabeled"))
        assert len(list((root / "preds").glob("*.png"))) == 1
        assert len(list((root / "review").glob("*.png"))) == 1

    def test_review_sheet_is_three_panels_wide(self, pipeline):
        root, _, _ = pipeline
        sheet = raster.load_image(next((root / "review").glob("*.png")))
        assert sheet.data.shape == (16, 48, 3)

    def test_eval_and_qc_commands_run(self, pipeline, capsys):
        root, cfg, _ = pipeline
        assert main(["eval", "--config", str(cfg), "--pred", str(root / "preds"),
                     "--split", "validation", "--band", "1",
                     "--out", str(root / "eval.json")]) == 0
        assert "MSE" in capsys.readouterr().out
        assert (root / "eval.json").exists()
        assert main(["qc", "--config", str(cfg), "--pred", str(root / "preds"),
                     "--split", "validation"]) == 0
        assert "Pass" in capsys.readouterr().out

    def test_eval_on_ground_truth_is_all_zeros(self, pipeline, capsys):
        root, cfg, ws = pipeline
        manifest = DatasetManifest.load(ws / "manifest.jsonl")
        gt_dir = root / "gt_preds"
        gt_dir.mkdir(exist_ok=True)
        for rec in manifest.split("validation"):
            shutil.copy(manifest.resolve(rec.alpha_gt), gt_dir / f"{rec.sample_id}.png")
        assert main(["eval", "--config", str(cfg), "--pred", str(gt_dir),
                     "--split", "validation"]) == 0
        out = capsys.readouterr().out
        data_rows = [l for l in out.strip().split("\n") if not l.lstrip().startswith(("Sample", "MSE", "validation"))]
        for row in data_rows:
            for cell in row.split()[1:]:
                assert float(cell) == 0.0, out

    def test_ratio_sweep_emits_one_row_per_value(self, pipeline, capsys):
        root, cfg, ws = pipeline
        teacher = str(ws / "checkpoints/teacher_base.ckpt")
        assert main(["ratio-sweep", "--config", str(cfg), "--checkpoint", teacher,
                     "--values", "0.5,1.0", "--iterations", "2"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert "base_fraction" in lines[0]
        assert len(lines) == 3

    def test_refusal_without_force(self, pipeline, capsys):
        _, cfg, _ = pipeline
        assert main(["gen-data", "--config", str(cfg)]) == 2
        assert "--force" in capsys.readouterr().err
        assert main(["train-base", "--config", str(cfg), "--iterations", "1"]) == 2

    def test_force_overwrites(self, pipeline):
        root, cfg, ws = pipeline
        before = (ws / "manifest.jsonl").read_bytes()
        assert main(["gen-data", "--config", str(cfg), "--force"]) == 0
        # Same config and seed regenerate the same dataset, minus annotations.
        assert (ws / "manifest.jsonl").exists()
        (ws / "manifest.jsonl").write_bytes(before)

    def test_workspace_env_override(self, pipeline, monkeypatch, capsys):
        root, cfg, _ = pipeline
        alt = root / "alt_ws"
        monkeypatch.setenv("STAGEMATTE_WORKSPACE", str(alt))
        assert main(["gen-data", "--config", str(cfg)]) == 0
        assert (alt / "manifest.jsonl").exists()


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_missing_required_option_is_usage_error(self):
        assert main(["gen-data"]) == 1

    def test_missing_manifest_is_data_error(self, tmp_path, capsys):
        cfg = tmp_path / "p.yaml"
        cfg.write_text("workspace: nowhere\n")
        assert main(["train-base", "--config", str(cfg)]) == 2
        assert "gen-data" in capsys.readouterr().err

    def test_empty_split_is_data_error(self, pipeline, capsys):
        root, cfg, ws = pipeline
        refined = str(ws / "checkpoints/teacher_refined.ckpt")
        assert main(["predict", "--config", str(cfg), "--checkpoint", refined,
                     "--split", "bogus", "--out", str(root / "nope")]) == 2

    def test_missing_checkpoint_is_usage_error(self, pipeline):
        _, cfg, _ = pipeline
        assert main(["finetune-teacher", "--config", str(cfg),
                     "--checkpoint", "missing.ckpt"]) == 1
