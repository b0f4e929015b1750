"""Feature-pyramid fusion and saliency map prediction.

Pyramid levels are projected to a common width; fusion adds a convolution of
the finer map to a 2x bilinear upsample of the coarser map, walked top-down
through the four levels. A 1-channel convolution, bilinear upsample to the
input resolution, and a logistic squash produce the final map in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ValidationError


@dataclass(frozen=True)
class FpnConfig:
    fused_channels: int = 64

    def __post_init__(self):
        if self.fused_channels < 1:
            raise ValidationError("fused width must be >= 1")


class FpnFuse(nn.Module):
    """fuse(x, y) = conv(x) + upsample2x(y); y must be exactly half x's size."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x, y):
        if (y.shape[2] * 2, y.shape[3] * 2) != (x.shape[2], x.shape[3]):
            raise ValidationError(
                f"fusion needs a 2x size step, got {tuple(x.shape[2:])} vs "
                f"{tuple(y.shape[2:])}"
            )
        up = F.interpolate(y, scale_factor=2, mode="bilinear", align_corners=False)
        return self.conv(x) + up


class SaliencyHead(nn.Module):
    """Top-down FPN over a 4-level pyramid, ending in a logistic saliency map."""

    def __init__(self, pyramid_channels, cfg: FpnConfig | None = None):
        super().__init__()
        self.cfg = cfg or FpnConfig()
        if len(pyramid_channels) != 4:
            raise ValidationError(
                f"the fusion chain is defined for 4 pyramid stages, got "
                f"{len(pyramid_channels)}"
            )
        width = self.cfg.fused_channels
        self.laterals = nn.ModuleList(
            [nn.Conv2d(c, width, kernel_size=1) for c in pyramid_channels]
        )
        self.fuse32 = FpnFuse(width)
        self.fuse21 = FpnFuse(width)
        self.fuse10 = FpnFuse(width)
        self.out_conv = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.score = nn.Conv2d(width, 1, kernel_size=3, padding=1)

    def logits(self, pyramid, out_size):
        """Pre-squash map at ``out_size`` (h, w)."""
        if len(pyramid) != 4:
            raise ValidationError(f"expected a 4-level pyramid, got {len(pyramid)} levels")
        f1, f2, f3, f4 = (lat(p) for lat, p in zip(self.laterals, pyramid))
        f3p = self.fuse32(f3, f4)
        f2p = self.fuse21(f2, f3p)
        fused = self.out_conv(self.fuse10(f1, f2p))
        score = self.score(fused)
        if tuple(score.shape[2:]) != tuple(out_size):
            score = F.interpolate(score, size=out_size, mode="bilinear", align_corners=False)
        return score

    def forward(self, pyramid, out_size):
        return torch.sigmoid(self.logits(pyramid, out_size))
