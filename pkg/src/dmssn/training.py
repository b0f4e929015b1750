"""Two-stage optimization: teacher pre-training, then joint training with a
frozen-teacher distillation signal, plus checkpoint I/O and inference.

Checkpoints are a directory of raw little-endian float32 arrays (one file per
parameter) beside a JSON manifest recording name/shape/dtype per array, the
architecture, its hash, and the training recipe. Loading verifies the hash
against the requesting configuration's architecture.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import losses
from .autoencoder import (
    StudentAutoencoder,
    TeacherAutoencoder,
    distillation_pairs,
)
from .cube_io import DatasetManifest, load_cube, load_mask
from .data import HyperCube, SaliencyMask, _center_crop, _resize_plane, normalize_cube
from .errors import TrainingDivergedError, ValidationError
from .homogenize import GmmOptions, assign_materials, fit_gmm, homogenize
from .metrics import curve_metrics
from .model import DmssnNet, ModelConfig

CHECKPOINT_FORMAT_VERSION = 1

STAGE_TEACHER = "teacher"
STAGE_DMSSN = "dmssn"


@dataclass
class TrainConfig:
    """Optimization recipe for one stage.

    ``learning_rate`` 0 is tolerated here (it makes every step a no-op, which
    the tests rely on); the config-file loader enforces the strictly positive
    invariant for real runs.
    """

    stage: str
    learning_rate: float
    batch_size: int
    epochs: int
    weight_decay: float = 0.01
    seed: int = 0
    augment_scale: tuple[float, float] = (1.0, 1.0)
    gmm_components: int = 6
    val_fraction: float = 0.2
    huber_delta: float = losses.HUBER_DELTA
    grad_clip: float = 1.0  # max gradient norm; 0 disables clipping

    def __post_init__(self):
        if self.stage not in (STAGE_TEACHER, STAGE_DMSSN):
            raise ValidationError(f"unknown training stage {self.stage!r}")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must not be negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must lie in [0, 1)")

    @classmethod
    def paper_teacher(cls, **overrides) -> "TrainConfig":
        kwargs = dict(learning_rate=0.002, batch_size=4, epochs=50)
        kwargs.update(overrides)
        return cls(stage=STAGE_TEACHER, **kwargs)

    @classmethod
    def paper_dmssn(cls, **overrides) -> "TrainConfig":
        kwargs = dict(learning_rate=0.06, batch_size=12, epochs=100)
        kwargs.update(overrides)
        return cls(stage=STAGE_DMSSN, **kwargs)

    @classmethod
    def desk(cls, stage: str, **overrides) -> "TrainConfig":
        """CPU-sized profile: the paper's teacher rate for both stages, 30 epochs."""
        kwargs = dict(learning_rate=0.002, batch_size=4, epochs=30)
        kwargs.update(overrides)
        return cls(stage=stage, **kwargs)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "augment_scale": list(self.augment_scale),
            "gmm_components": self.gmm_components,
            "val_fraction": self.val_fraction,
            "huber_delta": self.huber_delta,
            "grad_clip": self.grad_clip,
        }


def config_hash(model_config: ModelConfig) -> str:
    doc = json.dumps(model_config.to_dict(), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def parameter_hash(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, param in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    architecture: ModelConfig
    state: dict[str, np.ndarray]
    stage: str
    epoch: int
    seed: int
    loss_tail: list[float] = field(default_factory=list)
    train_config: dict | None = None

    def build_teacher(self) -> TeacherAutoencoder:
        if self.stage != STAGE_TEACHER:
            raise ValidationError(f"checkpoint stage is {self.stage!r}, not teacher")
        model = TeacherAutoencoder(self.architecture.schedule)
        _load_state(model, self.state)
        return model

    def build_dmssn(self) -> DmssnNet:
        if self.stage != STAGE_DMSSN:
            raise ValidationError(f"checkpoint stage is {self.stage!r}, not dmssn")
        model = DmssnNet(self.architecture)
        _load_state(model, self.state)
        return model


def _load_state(model: nn.Module, state: dict[str, np.ndarray]) -> None:
    tensors = {k: torch.from_numpy(v.copy()) for k, v in state.items()}
    missing = set(model.state_dict()) - set(tensors)
    extra = set(tensors) - set(model.state_dict())
    if missing or extra:
        raise ValidationError(
            f"checkpoint does not fit the model: missing={sorted(missing)}, "
            f"unexpected={sorted(extra)}"
        )
    model.load_state_dict(tensors)


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    architecture: ModelConfig,
    stage: str,
    epoch: int,
    seed: int,
    loss_tail: list[float] | None = None,
    train_config: TrainConfig | None = None,
) -> Path:
    path = Path(path)
    arrays_dir = path / "arrays"
    arrays_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, tensor) in enumerate(sorted(model.state_dict().items())):
        arr = tensor.detach().cpu().numpy().astype("<f4")
        safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name)
        fname = f"{i:04d}_{safe}.bin"
        (arrays_dir / fname).write_bytes(arr.tobytes())
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "file": fname}
        )
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "stage": stage,
        "epoch": epoch,
        "seed": seed,
        "config_hash": config_hash(architecture),
        "architecture": architecture.to_dict(),
        "loss_tail": list(loss_tail or [])[-20:],
        "train_config": train_config.to_dict() if train_config else None,
        "arrays": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    architecture = ModelConfig.from_dict(manifest["architecture"])
    if manifest["config_hash"] != config_hash(architecture):
        raise ValidationError(f"checkpoint {path} architecture hash mismatch")
    state = {}
    for entry in manifest["arrays"]:
        raw = (path / "arrays" / entry["file"]).read_bytes()
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        if not np.isfinite(arr).all():
            raise ValidationError(f"checkpoint array {entry['name']} has non-finite values")
        state[entry["name"]] = arr
    return Checkpoint(
        architecture=architecture,
        state=state,
        stage=manifest["stage"],
        epoch=manifest["epoch"],
        seed=manifest["seed"],
        loss_tail=manifest.get("loss_tail", []),
        train_config=manifest.get("train_config"),
    )


# ---------------------------------------------------------------------------
# Scene intake


@dataclass
class ScenePack:
    """One training sample: normalized cube, homogenized cube, binary mask."""

    i: np.ndarray  # (H, W, C) float32, normalized input
    g: np.ndarray  # (H, W, C) float32, homogenized
    t: np.ndarray  # (H, W) float32 in {0, 1}
    path: str = ""


def prepare_scene(
    cube: HyperCube,
    mask: SaliencyMask | None,
    gmm_components: int,
    seed: int = 0,
    path: str = "",
) -> ScenePack:
    """Normalize, fit the material mixture, and homogenize one cube."""
    normed = normalize_cube(cube)
    pixels = normed.values.reshape(-1, normed.bands)
    model = fit_gmm(pixels, gmm_components, GmmOptions(seed=seed))
    labels = assign_materials(normed, model)
    g = homogenize(normed, labels)
    t = mask.values.astype(np.float32) if mask is not None else np.zeros(normed.shape[:2], np.float32)
    return ScenePack(
        i=normed.values.astype(np.float32),
        g=g.values.astype(np.float32),
        t=t,
        path=path,
    )


def load_scenes(manifest: DatasetManifest, gmm_components: int, seed: int = 0) -> list[ScenePack]:
    scenes = []
    for cube_path, mask_path in manifest.pairs:
        cube = load_cube(cube_path)
        mask = load_mask(mask_path)
        if not mask.matches(cube):
            raise ValidationError(f"{mask_path} does not match {cube_path} spatially")
        scenes.append(prepare_scene(cube, mask, gmm_components, seed=seed, path=str(cube_path)))
    return scenes


def split_scenes(
    scenes: list[ScenePack], val_fraction: float
) -> tuple[list[ScenePack], list[ScenePack]]:
    """Deterministic split: scenes ordered by path hash, first fraction held out."""
    if val_fraction <= 0 or len(scenes) < 2:
        return list(scenes), []
    ranked = sorted(scenes, key=lambda s: hashlib.sha256(s.path.encode()).hexdigest())
    n_val = max(1, int(round(len(scenes) * val_fraction)))
    return ranked[n_val:], ranked[:n_val]


def _augmented_arrays(scene: ScenePack, scale: float) -> ScenePack:
    h, w = scene.t.shape
    out_h, out_w = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    if out_h < h or out_w < w:
        raise ValidationError("augmentation scale must not shrink below the crop size")
    i = _center_crop(_resize_plane(scene.i, out_h, out_w, nearest=False), h, w)
    g = _center_crop(_resize_plane(scene.g, out_h, out_w, nearest=False), h, w)
    t = _center_crop(_resize_plane(scene.t, out_h, out_w, nearest=True), h, w)
    return ScenePack(
        i.astype(np.float32), g.astype(np.float32), (t > 0.5).astype(np.float32), scene.path
    )


def _batch_tensors(scenes: list[ScenePack]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    shapes = {s.i.shape for s in scenes}
    if len(shapes) != 1:
        raise ValidationError(f"cannot batch scenes of differing shapes: {sorted(shapes)}")
    i = torch.from_numpy(np.stack([s.i for s in scenes])).permute(0, 3, 1, 2)
    g = torch.from_numpy(np.stack([s.g for s in scenes])).permute(0, 3, 1, 2)
    t = torch.from_numpy(np.stack([s.t for s in scenes])).unsqueeze(1)
    return i, g, t


def _epoch_batches(
    scenes: list[ScenePack], cfg: TrainConfig, epoch: int
) -> list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """Seeded shuffle, per-sample augmentation draw, fixed-size batch assembly."""
    rng = np.random.default_rng((cfg.seed, epoch))
    order = rng.permutation(len(scenes))
    lo, hi = cfg.augment_scale
    batches = []
    for start in range(0, len(order), cfg.batch_size):
        chunk = []
        for idx in order[start : start + cfg.batch_size]:
            scene = scenes[idx]
            if hi > lo or lo != 1.0:
                scale = float(rng.uniform(lo, hi)) if hi > lo else lo
                scene = _augmented_arrays(scene, scale)
            chunk.append(scene)
        batches.append(_batch_tensors(chunk))
    return batches


def _check_finite_step(model: nn.Module, loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at {where}")
    for name, param in model.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise TrainingDivergedError(f"non-finite gradient in {name} at {where}")


def _clip_gradients(model: nn.Module, cfg: TrainConfig) -> None:
    if cfg.grad_clip > 0:
        nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)


@dataclass
class TrainResult:
    checkpoint_dir: Path
    best_value: float
    epoch_values: list[float]
    history: list[dict]


class MetricsLog:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# Stage 1: teacher pre-training


def pretrain_teacher(
    scenes: list[ScenePack],
    model_config: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | Path,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Optimize the teacher autoencoder on homogenized inputs against the raw cube."""
    if cfg.stage != STAGE_TEACHER:
        raise ValidationError(f"expected a teacher-stage config, got {cfg.stage!r}")
    torch.manual_seed(cfg.seed)
    teacher = TeacherAutoencoder(model_config.schedule)
    optimizer = torch.optim.AdamW(
        teacher.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)
    log = MetricsLog(log_path)

    best_loss = float("inf")
    best_state = None
    best_epoch = -1
    epoch_means = []
    step = 0
    for epoch in range(cfg.epochs):
        teacher.train()
        epoch_losses = []
        for b, (i, g, _) in enumerate(_epoch_batches(scenes, cfg, epoch)):
            optimizer.zero_grad()
            acts = teacher(g)
            loss = losses.hs_loss(acts.d, i, cfg.huber_delta)
            loss.backward()
            _check_finite_step(teacher, loss, f"epoch {epoch} batch {b}")
            _clip_gradients(teacher, cfg)
            optimizer.step()
            value = float(loss.detach())
            epoch_losses.append(value)
            log.write({"step": step, "epoch": epoch, "L_T": value})
            step += 1
        scheduler.step()
        mean_loss = float(np.mean(epoch_losses))
        epoch_means.append(mean_loss)
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_state = {k: v.detach().clone() for k, v in teacher.state_dict().items()}
            best_epoch = epoch
    if best_state is not None:
        teacher.load_state_dict(best_state)
    ckpt_dir = save_checkpoint(
        out_dir,
        teacher,
        model_config,
        stage=STAGE_TEACHER,
        epoch=best_epoch,
        seed=cfg.seed,
        loss_tail=epoch_means,
        train_config=cfg,
    )
    return TrainResult(ckpt_dir, best_loss, epoch_means, log.records)


# ---------------------------------------------------------------------------
# Stage 2: joint training with frozen-teacher distillation


def _validation_avg_f1(model: DmssnNet, scenes: list[ScenePack]) -> float:
    model.eval()
    values = []
    with torch.no_grad():
        for scene in scenes:
            g = torch.from_numpy(scene.g).permute(2, 0, 1).unsqueeze(0)
            saliency, _ = model(g)
            values.append(
                curve_metrics(saliency[0, 0].numpy(), scene.t).avg_f1
            )
    model.train()
    return float(np.mean(values)) if values else float("nan")


def train_dmssn(
    scenes: list[ScenePack],
    teacher_ckpt: Checkpoint,
    model_config: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | Path,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Joint optimization of student + backbone + head under the hybrid loss.

    The teacher is rebuilt from its checkpoint, frozen, and only supplies the
    three guidance activations; its parameters are bit-identical afterwards.
    """
    if cfg.stage != STAGE_DMSSN:
        raise ValidationError(f"expected a dmssn-stage config, got {cfg.stage!r}")
    if teacher_ckpt.architecture.schedule != model_config.schedule:
        raise ValidationError(
            f"teacher checkpoint schedule {teacher_ckpt.architecture.schedule} is "
            f"incompatible with the configured schedule {model_config.schedule}"
        )
    torch.manual_seed(cfg.seed)
    teacher = teacher_ckpt.build_teacher()
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    frozen_hash = parameter_hash(teacher)

    model = DmssnNet(model_config)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)
    log = MetricsLog(log_path)

    train_split, val_split = split_scenes(scenes, cfg.val_fraction)
    if not train_split:
        raise ValidationError("validation split left no training scenes")

    best_f1 = -float("inf")
    best_state = None
    best_epoch = -1
    epoch_f1s = []
    step = 0
    for epoch in range(cfg.epochs):
        epoch_total = []
        for b, (i, g, t) in enumerate(_epoch_batches(train_split, cfg, epoch)):
            optimizer.zero_grad()
            with torch.no_grad():
                teacher_acts = teacher(g)
            saliency, student_acts, logits = model.forward_with_logits(g)
            l_s = losses.hs_loss(student_acts.d, i, cfg.huber_delta)
            l_sod, sod_parts = losses.sod_loss(saliency, t, logits=logits)
            t_pairs, s_pairs = distillation_pairs(teacher_acts, student_acts)
            l_dis, dis_pairs = losses.distillation_loss(t_pairs, s_pairs, cfg.huber_delta)
            loss = losses.total_loss(l_s, l_sod, l_dis)
            loss.backward()
            _check_finite_step(model, loss, f"epoch {epoch} batch {b}")
            _clip_gradients(model, cfg)
            optimizer.step()
            report = losses.LossReport(
                recon=float(l_s.detach()),
                sod=float(l_sod.detach()),
                dis=float(l_dis.detach()),
                components=sod_parts,
                dis_pairs=dis_pairs,
            )
            report.validate()
            epoch_total.append(report.total)
            log.write(json.loads(report.to_json(step)) | {"epoch": epoch})
            step += 1
        scheduler.step()
        if val_split:
            f1 = _validation_avg_f1(model, val_split)
        else:
            f1 = -float(np.mean(epoch_total))  # fall back to (negated) train loss
        epoch_f1s.append(f1)
        if f1 > best_f1:
            best_f1 = f1
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best_epoch = epoch

    if parameter_hash(teacher) != frozen_hash:
        raise TrainingDivergedError("frozen teacher parameters changed during training")
    if best_state is not None:
        model.load_state_dict(best_state)
    ckpt_dir = save_checkpoint(
        out_dir,
        model,
        model_config,
        stage=STAGE_DMSSN,
        epoch=best_epoch,
        seed=cfg.seed,
        loss_tail=epoch_f1s,
        train_config=cfg,
    )
    return TrainResult(ckpt_dir, best_f1, epoch_f1s, log.records)


# ---------------------------------------------------------------------------
# Student-only training (the encoder-ablation rig: pure vs distilled student)


def train_student_autoencoder(
    scenes: list[ScenePack],
    model_config: ModelConfig,
    cfg: TrainConfig,
    teacher: TeacherAutoencoder | None = None,
) -> StudentAutoencoder:
    """Train just the student on reconstruction, optionally with distillation.

    With ``teacher`` given, the objective is L_S + L_dis under the frozen
    teacher; otherwise plain L_S. Both variants see identical budgets.
    """
    torch.manual_seed(cfg.seed)
    student = StudentAutoencoder(model_config.schedule)
    if teacher is not None:
        teacher.eval()
        for p in teacher.parameters():
            p.requires_grad_(False)
    optimizer = torch.optim.AdamW(
        student.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)
    for epoch in range(cfg.epochs):
        for b, (i, g, _) in enumerate(_epoch_batches(scenes, cfg, epoch)):
            optimizer.zero_grad()
            acts = student(g)
            loss = losses.hs_loss(acts.d, i, cfg.huber_delta)
            if teacher is not None:
                with torch.no_grad():
                    teacher_acts = teacher(g)
                t_pairs, s_pairs = distillation_pairs(teacher_acts, acts)
                l_dis, _ = losses.distillation_loss(t_pairs, s_pairs, cfg.huber_delta)
                loss = loss + l_dis
            loss.backward()
            _check_finite_step(student, loss, f"epoch {epoch} batch {b}")
            _clip_gradients(student, cfg)
            optimizer.step()
        scheduler.step()
    student.eval()
    return student


# ---------------------------------------------------------------------------
# Inference


def infer(
    cube: HyperCube,
    checkpoint: Checkpoint,
    skip_homogenization: bool = False,
    gmm_components: int = 6,
    gmm_seed: int = 0,
) -> SaliencyMask:
    """Deployment path: normalize, homogenize, encode, extract, predict.

    Deterministic given the checkpoint; ``skip_homogenization`` feeds the
    normalized cube straight to the student (the backbone-only variant).
    """
    schedule = checkpoint.architecture.schedule
    if cube.bands != schedule.bands:
        raise ValidationError(
            f"cube has {cube.bands} bands but the checkpoint expects {schedule.bands}"
        )
    model = checkpoint.build_dmssn()
    model.eval()
    normed = normalize_cube(cube)
    if skip_homogenization:
        g = normed.values
    else:
        pack = prepare_scene(normed, None, gmm_components, seed=gmm_seed)
        g = pack.g
    with torch.no_grad():
        tensor = torch.from_numpy(g.astype(np.float32)).permute(2, 0, 1).unsqueeze(0)
        saliency, _ = model(tensor)
    return SaliencyMask(saliency[0, 0].numpy().astype(np.float32), binary=False)
