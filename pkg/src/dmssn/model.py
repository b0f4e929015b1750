"""The full detection network: student encoder, MSST backbone, FPN head."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .autoencoder import ChannelSchedule, StudentActivations, StudentAutoencoder, TeacherAutoencoder
from .head import FpnConfig, SaliencyHead
from .msst import Msst, MsstConfig


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; hashed into checkpoints for compatibility checks."""

    schedule: ChannelSchedule
    msst: MsstConfig = field(default_factory=MsstConfig)
    fpn: FpnConfig = field(default_factory=FpnConfig)

    def to_dict(self) -> dict:
        return {
            "schedule": {
                "bands": self.schedule.bands,
                "wide": self.schedule.wide,
                "mid": self.schedule.mid,
                "encoded": self.schedule.encoded,
            },
            "msst": {
                "stage_channels": list(self.msst.stage_channels),
                "stage_blocks": list(self.msst.stage_blocks),
                "stage_strides": list(self.msst.stage_strides),
                "stage_reductions": list(self.msst.stage_reductions),
                "heads_per_group": self.msst.heads_per_group,
                "ffn_ratio": self.msst.ffn_ratio,
            },
            "fpn": {"fused_channels": self.fpn.fused_channels},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(
            schedule=ChannelSchedule(**doc["schedule"]),
            msst=MsstConfig(
                stage_channels=tuple(doc["msst"]["stage_channels"]),
                stage_blocks=tuple(doc["msst"]["stage_blocks"]),
                stage_strides=tuple(doc["msst"]["stage_strides"]),
                stage_reductions=tuple(doc["msst"]["stage_reductions"]),
                heads_per_group=doc["msst"]["heads_per_group"],
                ffn_ratio=doc["msst"]["ffn_ratio"],
            ),
            fpn=FpnConfig(**doc["fpn"]),
        )


class DmssnNet(nn.Module):
    """Student autoencoder feeding the MSST pyramid and the saliency head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.student = StudentAutoencoder(config.schedule)
        self.backbone = Msst(config.schedule.encoded, config.msst)
        self.head = SaliencyHead(config.msst.stage_channels, config.fpn)

    def forward(self, g) -> tuple[torch.Tensor, StudentActivations]:
        """Saliency map (B, 1, H, W) in (0, 1) plus the student activations."""
        saliency, acts, _ = self.forward_with_logits(g)
        return saliency, acts

    def forward_with_logits(self, g):
        """Training variant that also exposes the pre-squash map."""
        acts = self.student(g)
        pyramid = self.backbone(acts.e)
        logits = self.head.logits(pyramid, g.shape[2:])
        return torch.sigmoid(logits), acts, logits


def build_teacher(config: ModelConfig) -> TeacherAutoencoder:
    return TeacherAutoencoder(config.schedule)
