"""Two-stage training, checkpoints, and inference."""

import numpy as np
import pytest
import torch

from dmssn.autoencoder import ChannelSchedule, TeacherAutoencoder
from dmssn.data import HyperCube, SceneSampler, generate_synthetic_scene
from dmssn.errors import TrainingDivergedError, ValidationError
from dmssn.head import FpnConfig
from dmssn.model import DmssnNet, ModelConfig
from dmssn.msst import MsstConfig
from dmssn.training import (
    Checkpoint,
    TrainConfig,
    infer,
    load_checkpoint,
    parameter_hash,
    prepare_scene,
    pretrain_teacher,
    save_checkpoint,
    split_scenes,
    train_dmssn,
)


def tiny_model_config(bands=8):
    return ModelConfig(
        schedule=ChannelSchedule(bands, 6, 5, 4),
        msst=MsstConfig(stage_channels=(8, 8, 8, 8), stage_blocks=(1, 1, 1, 1)),
        fpn=FpnConfig(fused_channels=8),
    )


def tiny_scenes(n=4, seed=0, noise=0.01):
    sampler = SceneSampler(
        height=32, width=32, bands=8, n_materials=3, noise_sigma=noise,
        object_size=(6, 12), seed=seed,
    )
    scenes = []
    for i in range(n):
        cube, mask = generate_synthetic_scene(sampler.spec_for(i))
        scenes.append(prepare_scene(cube, mask, 5, seed=0, path=f"scene_{i}"))
    return scenes


@pytest.fixture(scope="module")
def scenes():
    return tiny_scenes()


def test_zero_learning_rate_leaves_parameters_unchanged(scenes, tmp_path):
    cfg = TrainConfig(stage="teacher", learning_rate=0.0, batch_size=2, epochs=2)
    config = tiny_model_config()
    torch.manual_seed(cfg.seed)
    reference = TeacherAutoencoder(config.schedule)
    ref_hash = parameter_hash(reference)
    result = pretrain_teacher(scenes, config, cfg, tmp_path / "ckpt")
    restored = load_checkpoint(result.checkpoint_dir).build_teacher()
    assert parameter_hash(restored) == ref_hash


def test_teacher_loss_descends_median_of_three_seeds(tmp_path):
    scenes = tiny_scenes(2, seed=1)
    drops = []
    for seed in range(3):
        cfg = TrainConfig(stage="teacher", learning_rate=0.002, batch_size=2,
                          epochs=5, seed=seed)
        result = pretrain_teacher(scenes, tiny_model_config(), cfg, tmp_path / f"t{seed}")
        drops.append(result.epoch_values[-1] - result.epoch_values[0])
    assert np.median(drops) < 0


def test_pretrain_records_recipe_in_manifest(scenes, tmp_path):
    cfg = TrainConfig.paper_teacher(epochs=1)
    assert (cfg.learning_rate, cfg.batch_size) == (0.002, 4)
    assert TrainConfig.paper_teacher().epochs == 50
    dmssn_paper = TrainConfig.paper_dmssn()
    assert (dmssn_paper.learning_rate, dmssn_paper.batch_size, dmssn_paper.epochs) == (
        0.06, 12, 100,
    )
    result = pretrain_teacher(scenes, tiny_model_config(), cfg, tmp_path / "ckpt")
    ckpt = load_checkpoint(result.checkpoint_dir)
    assert ckpt.train_config["learning_rate"] == 0.002
    assert ckpt.train_config["batch_size"] == 4


def test_checkpoint_roundtrip_preserves_inference(scenes, tmp_path):
    config = tiny_model_config()
    torch.manual_seed(0)
    model = DmssnNet(config)
    save_checkpoint(tmp_path / "ckpt", model, config, stage="dmssn", epoch=0, seed=0)
    ckpt = load_checkpoint(tmp_path / "ckpt")

    cube = HyperCube(scenes[0].i)
    before_model = model
    before_model.eval()
    with torch.no_grad():
        g = torch.from_numpy(scenes[0].g).permute(2, 0, 1).unsqueeze(0)
        direct = before_model(g)[0][0, 0].numpy()
    restored = ckpt.build_dmssn()
    restored.eval()
    with torch.no_grad():
        loaded = restored(g)[0][0, 0].numpy()
    np.testing.assert_allclose(loaded, direct, atol=1e-6)

    # and through the full infer path, maps agree run to run
    map_a = infer(cube, ckpt, gmm_components=5)
    map_b = infer(cube, ckpt, gmm_components=5)
    assert np.array_equal(map_a.values, map_b.values)
    assert map_a.shape == (32, 32)
    assert 0.0 < map_a.values.min() and map_a.values.max() < 1.0


def test_checkpoint_rejects_wrong_architecture(tmp_path):
    config = tiny_model_config()
    model = DmssnNet(config)
    save_checkpoint(tmp_path / "ckpt", model, config, stage="dmssn", epoch=0, seed=0)
    manifest = (tmp_path / "ckpt" / "manifest.json").read_text()
    (tmp_path / "ckpt" / "manifest.json").write_text(
        manifest.replace('"encoded": 4', '"encoded": 3')
    )
    with pytest.raises(ValidationError, match="hash"):
        load_checkpoint(tmp_path / "ckpt")


def test_train_dmssn_keeps_teacher_frozen(scenes, tmp_path):
    config = tiny_model_config()
    teacher_cfg = TrainConfig(stage="teacher", learning_rate=0.002, batch_size=2, epochs=1)
    teacher_result = pretrain_teacher(scenes, config, teacher_cfg, tmp_path / "teacher")
    teacher_ckpt = load_checkpoint(teacher_result.checkpoint_dir)
    before = parameter_hash(teacher_ckpt.build_teacher())

    cfg = TrainConfig(stage="dmssn", learning_rate=0.002, batch_size=2, epochs=2,
                      val_fraction=0.25)
    result = train_dmssn(scenes, teacher_ckpt, config, cfg, tmp_path / "joint",
                         log_path=tmp_path / "log.jsonl")
    after = parameter_hash(teacher_ckpt.build_teacher())
    assert before == after

    # per-step records carry all three components plus the total
    assert result.history
    for record in result.history:
        assert {"L_S", "L_sod", "L_dis", "L"} <= set(record)
        assert record["L"] == pytest.approx(
            record["L_S"] + record["L_sod"] + record["L_dis"], abs=1e-9
        )
    log_lines = (tmp_path / "log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == len(result.history)


def test_train_dmssn_rejects_incompatible_schedule(scenes, tmp_path):
    config = tiny_model_config()
    other = ModelConfig(
        schedule=ChannelSchedule(8, 7, 5, 4), msst=config.msst, fpn=config.fpn
    )
    teacher_cfg = TrainConfig(stage="teacher", learning_rate=0.002, batch_size=2, epochs=1)
    teacher_result = pretrain_teacher(scenes, other, teacher_cfg, tmp_path / "teacher")
    teacher_ckpt = load_checkpoint(teacher_result.checkpoint_dir)
    cfg = TrainConfig(stage="dmssn", learning_rate=0.002, batch_size=2, epochs=1)
    with pytest.raises(ValidationError, match="incompatible"):
        train_dmssn(scenes, teacher_ckpt, config, cfg, tmp_path / "joint")


def test_infer_rejects_band_mismatch(scenes, tmp_path):
    config = tiny_model_config()
    model = DmssnNet(config)
    save_checkpoint(tmp_path / "ckpt", model, config, stage="dmssn", epoch=0, seed=0)
    ckpt = load_checkpoint(tmp_path / "ckpt")
    wrong = HyperCube(np.random.default_rng(0).random((32, 32, 9), dtype=np.float64))
    with pytest.raises(ValidationError, match="bands"):
        infer(wrong, ckpt)


def test_infer_skip_homogenization_differs(scenes, tmp_path):
    config = tiny_model_config()
    torch.manual_seed(1)
    model = DmssnNet(config)
    save_checkpoint(tmp_path / "ckpt", model, config, stage="dmssn", epoch=0, seed=0)
    ckpt = load_checkpoint(tmp_path / "ckpt")
    cube = HyperCube(tiny_scenes(1, seed=9, noise=0.02)[0].i)
    with_h = infer(cube, ckpt, gmm_components=5)
    without_h = infer(cube, ckpt, skip_homogenization=True)
    assert with_h.shape == without_h.shape
    assert not np.array_equal(with_h.values, without_h.values)


def test_split_scenes_deterministic(scenes):
    train_a, val_a = split_scenes(scenes, 0.25)
    train_b, val_b = split_scenes(list(reversed(scenes)), 0.25)
    assert [s.path for s in val_a] == [s.path for s in val_b]
    assert len(val_a) == 1 and len(train_a) == 3


def test_nan_input_aborts_with_location(scenes, tmp_path):
    poisoned = tiny_scenes(2, seed=3)
    poisoned[0].g[0, 0, 0] = np.nan
    poisoned[1].g[0, 0, 0] = np.nan
    cfg = TrainConfig(stage="teacher", learning_rate=0.002, batch_size=2, epochs=1)
    with pytest.raises(TrainingDivergedError, match="epoch 0 batch 0"):
        pretrain_teacher(poisoned, tiny_model_config(), cfg, tmp_path / "ckpt")


def test_stage_validation():
    with pytest.raises(ValidationError, match="stage"):
        TrainConfig(stage="warmup", learning_rate=0.01, batch_size=1, epochs=1)
    with pytest.raises(ValidationError, match="negative"):
        TrainConfig(stage="teacher", learning_rate=-0.1, batch_size=1, epochs=1)
