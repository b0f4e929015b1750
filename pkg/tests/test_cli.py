"""CLI surface: subcommands, exit codes, overwrite protection, file outputs."""

import json

import numpy as np
import pytest

from dmssn.cli import main
from dmssn.cube_io import load_manifest, load_mask, save_mask
from dmssn.data import SaliencyMask

TINY = [
    "scene.height=32",
    "scene.width=32",
    "scene.bands=8",
    "scene.n_materials=3",
    "scene.n_scenes=4",
    "scene.object_size_min=6",
    "scene.object_size_max=10",
    "schedule.wide=6",
    "schedule.mid=5",
    "schedule.encoded=4",
    "msst.stage_channels=8,8,8,8",
    "msst.stage_blocks=1,1,1,1",
    "head.fused_channels=8",
    "teacher.epochs=2",
    "teacher.batch_size=2",
    "dmssn.epochs=2",
    "dmssn.batch_size=2",
    "dmssn.val_fraction=0.25",
]


def tiny_args(extra):
    args = []
    for kv in TINY + extra:
        args += ["--set", kv]
    return args


def test_help_exits_zero_and_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "scene.height" in out and "dmssn.learning_rate" in out


def test_unknown_subcommand_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert "error" in capsys.readouterr().err


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--no-such-flag"])
    assert exc.value.code == 1


def test_unknown_config_key_exits_one(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path / "d"), "--set", "scene.heigth=64"])
    assert code == 1
    assert "unknown config key" in capsys.readouterr().err


def test_train_without_teacher_exits_one(tmp_path, capsys):
    code = main(["train", "--data", "whatever.tsv", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "pre-train" in capsys.readouterr().err


def test_synth_writes_dataset_and_respects_force(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out)] + tiny_args([])) == 0
    manifest = load_manifest(out / "manifest.tsv")
    assert len(manifest) == 4
    manifest.validate_files()

    assert main(["synth", "--out", str(out)] + tiny_args([])) == 1
    assert "already exists" in capsys.readouterr().err
    assert main(["synth", "--out", str(out), "--force"] + tiny_args([])) == 0


def test_synth_seed_env_override(tmp_path, monkeypatch):
    out_a, out_b, out_c = (tmp_path / n for n in "abc")
    monkeypatch.setenv("DMSSN_SEED", "123")
    assert main(["synth", "--out", str(out_a)] + tiny_args([])) == 0
    assert main(["synth", "--out", str(out_b)] + tiny_args([])) == 0
    monkeypatch.setenv("DMSSN_SEED", "456")
    assert main(["synth", "--out", str(out_c)] + tiny_args([])) == 0
    cube_a = (out_a / "cubes" / "scene_0000.raw").read_bytes()
    cube_b = (out_b / "cubes" / "scene_0000.raw").read_bytes()
    cube_c = (out_c / "cubes" / "scene_0000.raw").read_bytes()
    assert cube_a == cube_b
    assert cube_a != cube_c


def test_eval_identical_files_perfect_scores(tmp_path, capsys):
    mask = np.zeros((16, 16), dtype=np.float32)
    mask[4:9, 5:12] = 1.0
    save_mask(SaliencyMask(mask), tmp_path / "m.pgm")
    out = tmp_path / "report"
    code = main([
        "eval", "--pred", str(tmp_path / "m.pgm"), "--gt", str(tmp_path / "m.pgm"),
        "--out", str(out),
    ])
    assert code == 0
    doc = json.loads((out / "eval.json").read_text())
    assert doc["mean"]["mae"] == 0.0
    assert doc["mean"]["cc"] == 1.0
    assert doc["mean"]["auc"] == 1.0
    assert (out / "eval.tsv").exists()
    assert (out / "curves.png").exists()
    assert (out / "curves.tsv").exists()
    assert "MAE" in capsys.readouterr().out


def test_eval_requires_inputs(capsys):
    assert main(["eval"]) == 1
    assert "eval needs" in capsys.readouterr().err


def test_full_pipeline_smoke(tmp_path, capsys):
    """synth -> pretrain-teacher -> train -> infer -> eval -> diagnose."""
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data)] + tiny_args([])) == 0
    manifest = str(data / "manifest.tsv")

    teacher_dir = tmp_path / "teacher"
    assert main(["pretrain-teacher", "--data", manifest, "--out", str(teacher_dir)]
                + tiny_args([])) == 0
    assert (teacher_dir / "manifest.json").exists()
    assert (teacher_dir / "loss_curves.png").exists()
    assert (teacher_dir / "metrics.jsonl").exists()

    joint_dir = tmp_path / "joint"
    assert main(["train", "--data", manifest, "--teacher", str(teacher_dir),
                 "--out", str(joint_dir)] + tiny_args([])) == 0
    assert (joint_dir / "manifest.json").exists()

    pred = tmp_path / "pred.pgm"
    montage = tmp_path / "montage.png"
    cube = str(data / "cubes" / "scene_0000.raw")
    gt = str(data / "masks" / "scene_0000.pgm")
    assert main(["infer", "--ckpt", str(joint_dir), "--cube", cube, "--out", str(pred),
                 "--gt", gt, "--montage", str(montage)] + tiny_args([])) == 0
    assert pred.exists() and montage.exists()
    loaded = load_mask(pred, binary=False)
    assert loaded.shape == (32, 32)

    assert main(["eval", "--pred", str(pred), "--gt", gt,
                 "--out", str(tmp_path / "report")] + tiny_args([])) == 0

    capsys.readouterr()
    assert main(["diagnose", "--data", manifest, "--teacher", str(teacher_dir),
                 "--dmssn", str(joint_dir), "--out", str(tmp_path / "diag")]
                + tiny_args([])) == 0
    table = capsys.readouterr().out
    assert "Method" in table and "PCA" in table and "Teacher Autoencoder" in table
    assert (tmp_path / "diag" / "diagnostics.tsv").exists()
    assert (tmp_path / "diag" / "diagnostics.png").exists()


def test_workdir_resolves_relative_paths(tmp_path):
    assert main(["synth", "--workdir", str(tmp_path), "--out", "rel_data"]
                + tiny_args([])) == 0
    assert (tmp_path / "rel_data" / "manifest.tsv").exists()
