"""Run configuration: a flat ``key = value`` text file with CLI overrides.

Every key is namespaced (``scene.height``), unknown keys are rejected, and the
file must carry ``config_version = 1``. Defaults encode the desk-scale
profile; the published training recipe (teacher lr 0.002 / batch 4 / 50
epochs, joint lr 0.06 / batch 12 / 100 epochs) ships in ``configs/paper.cfg``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .autoencoder import ChannelSchedule
from .data import SceneSampler
from .errors import ValidationError
from .head import FpnConfig
from .model import ModelConfig
from .msst import MsstConfig
from .training import STAGE_DMSSN, STAGE_TEACHER, TrainConfig

CONFIG_VERSION = 1


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x.strip()) for x in text.split(","))


def _parse_components(text: str) -> int | str:
    t = text.strip().lower()
    return "auto" if t == "auto" else int(t)


# key -> (parser, default). Defaults are the desk profile.
_SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "config_version": (int, CONFIG_VERSION),
    "seed": (int, 7),
    "scene.height": (int, 64),
    "scene.width": (int, 64),
    "scene.bands": (int, 32),
    "scene.n_materials": (int, 5),
    "scene.noise_sigma": (float, 0.01),
    "scene.illumination_gradient": (float, 0.0),
    "scene.n_scenes": (int, 20),
    "scene.objects_min": (int, 1),
    "scene.objects_max": (int, 3),
    "scene.object_size_min": (int, 8),
    "scene.object_size_max": (int, 20),
    "scene.min_curve_gap": (float, 0.5),
    "gmm.components": (_parse_components, "auto"),
    "gmm.max_iter": (int, 100),
    "gmm.tol": (float, 1e-6),
    "gmm.variance_floor": (float, 1e-6),
    "schedule.wide": (int, 24),
    "schedule.mid": (int, 16),
    "schedule.encoded": (int, 8),
    "msst.stage_channels": (_parse_int_list, (32, 64, 128, 256)),
    "msst.stage_blocks": (_parse_int_list, (2, 2, 2, 2)),
    "msst.stage_strides": (_parse_int_list, (4, 2, 2, 2)),
    "msst.stage_reductions": (_parse_int_list, (8, 4, 2, 1)),
    "msst.heads_per_group": (int, 2),
    "msst.ffn_ratio": (int, 4),
    "head.fused_channels": (int, 64),
    "teacher.learning_rate": (float, 0.002),
    "teacher.batch_size": (int, 4),
    "teacher.epochs": (int, 30),
    "teacher.weight_decay": (float, 0.01),
    "dmssn.learning_rate": (float, 0.002),
    "dmssn.batch_size": (int, 4),
    "dmssn.epochs": (int, 30),
    "dmssn.weight_decay": (float, 0.01),
    "dmssn.val_fraction": (float, 0.2),
    "augment.scale_min": (float, 1.0),
    "augment.scale_max": (float, 1.0),
    "metrics.thresholds": (int, 255),
    "metrics.binary_threshold": (float, 0.5),
    "diagnostics.bins": (int, 256),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse and type one config document; unknown keys are an error."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ValidationError(f"{source}:{lineno}: unknown config key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ValidationError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def apply_overrides(values: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply CLI ``key=value`` overrides on top of file values."""
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ValidationError(f"unknown config key in override: {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ValidationError(f"bad override value for {key}: {exc}") from exc
    return values


@dataclass
class RunConfig:
    """The validated configuration tree every subcommand runs from."""

    seed: int
    sampler: SceneSampler
    n_scenes: int
    gmm_components: int
    gmm_max_iter: int
    gmm_tol: float
    gmm_variance_floor: float
    model: ModelConfig
    teacher_train: TrainConfig
    dmssn_train: TrainConfig
    metric_thresholds: int
    binary_threshold: float
    diagnostics_bins: int

    @classmethod
    def from_values(cls, values: dict[str, Any]) -> "RunConfig":
        def get(key: str) -> Any:
            return values.get(key, _SCHEMA[key][1])

        if get("config_version") != CONFIG_VERSION:
            raise ValidationError(
                f"unsupported config_version {get('config_version')} "
                f"(this build reads version {CONFIG_VERSION})"
            )
        seed = int(get("seed"))
        sampler = SceneSampler(
            height=get("scene.height"),
            width=get("scene.width"),
            bands=get("scene.bands"),
            n_materials=get("scene.n_materials"),
            noise_sigma=get("scene.noise_sigma"),
            illumination_gradient=get("scene.illumination_gradient"),
            objects_per_scene=(get("scene.objects_min"), get("scene.objects_max")),
            object_size=(get("scene.object_size_min"), get("scene.object_size_max")),
            seed=seed,
            min_curve_gap=get("scene.min_curve_gap"),
        )
        components = get("gmm.components")
        if components == "auto":
            components = get("scene.n_materials") + 2
        schedule = ChannelSchedule(
            bands=get("scene.bands"),
            wide=get("schedule.wide"),
            mid=get("schedule.mid"),
            encoded=get("schedule.encoded"),
        )
        model = ModelConfig(
            schedule=schedule,
            msst=MsstConfig(
                stage_channels=get("msst.stage_channels"),
                stage_blocks=get("msst.stage_blocks"),
                stage_strides=get("msst.stage_strides"),
                stage_reductions=get("msst.stage_reductions"),
                heads_per_group=get("msst.heads_per_group"),
                ffn_ratio=get("msst.ffn_ratio"),
            ),
            fpn=FpnConfig(fused_channels=get("head.fused_channels")),
        )
        scale = (get("augment.scale_min"), get("augment.scale_max"))
        if scale[0] < 1.0 or scale[1] < scale[0]:
            raise ValidationError(
                f"augment scale range {scale} invalid: need 1.0 <= min <= max "
                "(scaling below 1 would undercut the center crop)"
            )
        for stage_key in ("teacher", "dmssn"):
            if get(f"{stage_key}.learning_rate") <= 0:
                raise ValidationError(f"{stage_key}.learning_rate must be > 0")
        teacher_train = TrainConfig(
            stage=STAGE_TEACHER,
            learning_rate=get("teacher.learning_rate"),
            batch_size=get("teacher.batch_size"),
            epochs=get("teacher.epochs"),
            weight_decay=get("teacher.weight_decay"),
            seed=seed,
            augment_scale=scale,
            gmm_components=components,
            val_fraction=0.0,
        )
        dmssn_train = TrainConfig(
            stage=STAGE_DMSSN,
            learning_rate=get("dmssn.learning_rate"),
            batch_size=get("dmssn.batch_size"),
            epochs=get("dmssn.epochs"),
            weight_decay=get("dmssn.weight_decay"),
            seed=seed,
            augment_scale=scale,
            gmm_components=components,
            val_fraction=get("dmssn.val_fraction"),
        )
        if get("metrics.thresholds") < 1:
            raise ValidationError("metrics.thresholds must be >= 1")
        if not 0.0 <= get("metrics.binary_threshold") <= 1.0:
            raise ValidationError("metrics.binary_threshold must lie in [0, 1]")
        return cls(
            seed=seed,
            sampler=sampler,
            n_scenes=get("scene.n_scenes"),
            gmm_components=components,
            gmm_max_iter=get("gmm.max_iter"),
            gmm_tol=get("gmm.tol"),
            gmm_variance_floor=get("gmm.variance_floor"),
            model=model,
            teacher_train=teacher_train,
            dmssn_train=dmssn_train,
            metric_thresholds=get("metrics.thresholds"),
            binary_threshold=get("metrics.binary_threshold"),
            diagnostics_bins=get("diagnostics.bins"),
        )

def load_config(
    path: str | Path | None,
    overrides: list[str] | None = None,
    seed_override: int | None = None,
) -> RunConfig:
    """Read, override, and validate a run config (defaults when no file given).

    ``seed_override`` (the DMSSN_SEED environment hook) wins over both the
    file and explicit overrides.
    """
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file not found: {p}")
        values = parse_config_text(p.read_text(), source=str(p))
    if overrides:
        values = apply_overrides(values, overrides)
    if seed_override is not None:
        values["seed"] = seed_override
    return RunConfig.from_values(values)


def describe_keys() -> str:
    """One line per config key with its default (used by --help output)."""
    lines = []
    for key, (_, default) in _SCHEMA.items():
        if isinstance(default, tuple):
            default = ",".join(str(x) for x in default)
        lines.append(f"{key} (default: {default})")
    return "\n".join(lines)
