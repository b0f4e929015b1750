"""Mixed spectral-spatial transformer backbone.

Each block projects queries to twice the channel width and splits them across
two attention-head groups. Keys and values for the spectral group come from a
per-pixel (1x1) transform of the spatially reduced features, so they carry no
pixel-to-pixel mixing; the spatial group uses one 3x3 kernel shared across
channels, so it carries no cross-channel mixing. The attended groups are
concatenated, linearly fused, passed through an MLP, and added back to the
block input. Stages stack blocks behind strided patch embeddings to form a
four-level feature pyramid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn
import torch.nn.functional as F

from .autoencoder import SharedSpatialConv
from .errors import ValidationError


@dataclass(frozen=True)
class MssBlockConfig:
    channels: int
    heads_per_group: int = 2
    reduction: int = 1  # kernel == stride of the key/value spatial reduction
    ffn_ratio: int = 4

    def __post_init__(self):
        if self.channels < 1 or self.reduction < 1:
            raise ValidationError("channels and reduction must be >= 1")
        if self.channels % self.heads_per_group != 0:
            raise ValidationError(
                f"channels {self.channels} not divisible by heads_per_group "
                f"{self.heads_per_group}"
            )

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads_per_group


@dataclass(frozen=True)
class MsstConfig:
    """Stage layout; defaults give the 4-stage pyramid (strides 4,2,2,2)."""

    stage_channels: tuple[int, ...] = (32, 64, 128, 256)
    stage_blocks: tuple[int, ...] = (2, 2, 2, 2)
    stage_strides: tuple[int, ...] = (4, 2, 2, 2)
    stage_reductions: tuple[int, ...] = (8, 4, 2, 1)
    heads_per_group: int = 2
    ffn_ratio: int = 4

    def __post_init__(self):
        n = len(self.stage_channels)
        if n < 1:
            raise ValidationError("need at least one stage")
        for name, seq in [
            ("stage_blocks", self.stage_blocks),
            ("stage_strides", self.stage_strides),
            ("stage_reductions", self.stage_reductions),
        ]:
            if len(seq) != n:
                raise ValidationError(f"{name} must list {n} stages, got {len(seq)}")
        if any(c2 < c1 for c1, c2 in zip(self.stage_channels, self.stage_channels[1:])):
            raise ValidationError("stage channel widths must be nondecreasing")
        for c in self.stage_channels:
            MssBlockConfig(c, self.heads_per_group)  # validates divisibility

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels)

    def block_config(self, stage: int) -> MssBlockConfig:
        return MssBlockConfig(
            channels=self.stage_channels[stage],
            heads_per_group=self.heads_per_group,
            reduction=self.stage_reductions[stage],
            ffn_ratio=self.ffn_ratio,
        )

    def total_stride(self) -> int:
        return math.prod(self.stage_strides)


class PatchEmbed(nn.Module):
    """Strided convolutional projection plus per-position LayerNorm."""

    def __init__(self, in_channels, out_channels, stride):
        super().__init__()
        self.stride = stride
        self.proj = nn.Conv2d(in_channels, out_channels, kernel_size=stride, stride=stride)
        self.norm = nn.LayerNorm(out_channels)

    def forward(self, x):
        h, w = x.shape[2], x.shape[3]
        if h % self.stride or w % self.stride:
            pad_h = (-h) % self.stride
            pad_w = (-w) % self.stride
            raise ValidationError(
                f"spatial dims {h}x{w} not divisible by stride {self.stride}; "
                f"pad to {h + pad_h}x{w + pad_w}"
            )
        x = self.proj(x)
        x = x.permute(0, 2, 3, 1)
        x = self.norm(x)
        return x.permute(0, 3, 1, 2)


class QkvProjector(nn.Module):
    """Produces the grouped queries, keys, and values of one block.

    Queries: 1x1 convolution to 2C channels at full resolution, split into the
    spectral half (first C) and spatial half (last C). Keys/values: a KxK
    stride-K reduction first, then a 1x1 per-pixel transform (spectral group)
    and a channel-shared 3x3 transform (spatial group); values use layers of
    identical form with their own weights.
    """

    def __init__(self, cfg: MssBlockConfig):
        super().__init__()
        c = cfg.channels
        self.cfg = cfg
        self.query = nn.Conv2d(c, 2 * c, kernel_size=1)
        if cfg.reduction > 1:
            self.reduce = nn.Conv2d(c, c, kernel_size=cfg.reduction, stride=cfg.reduction)
        else:
            self.reduce = nn.Identity()
        self.key_spectral = nn.Conv2d(c, c, kernel_size=1)
        self.value_spectral = nn.Conv2d(c, c, kernel_size=1)
        self.key_spatial = SharedSpatialConv()
        self.value_spatial = SharedSpatialConv()

    def forward(self, e):
        h, w = e.shape[2], e.shape[3]
        r = self.cfg.reduction
        if h % r or w % r:
            raise ValidationError(f"spatial dims {h}x{w} not divisible by reduction {r}")
        q = self.query(e)
        q1, q2 = q.chunk(2, dim=1)
        e_hat = self.reduce(e)
        k1 = self.key_spectral(e_hat)
        v1 = self.value_spectral(e_hat)
        k2 = self.key_spatial(e_hat)
        v2 = self.value_spatial(e_hat)
        return q1, q2, k1, k2, v1, v2


def group_attention(q, k, v, heads: int, return_weights: bool = False):
    """Multi-head attention of one group: queries at full resolution, keys and
    values at the reduced resolution; scaled by sqrt(head_dim).

    Shapes: q (B, C, H, W); k, v (B, C, Hr, Wr) -> output (B, C, H, W).
    """
    b, c, h, w = q.shape
    if c % heads:
        raise ValidationError(f"channels {c} not divisible by heads {heads}")
    hd = c // heads
    qf = q.flatten(2).transpose(1, 2).reshape(b, h * w, heads, hd).transpose(1, 2)
    kf = k.flatten(2).transpose(1, 2).reshape(b, -1, heads, hd).transpose(1, 2)
    vf = v.flatten(2).transpose(1, 2).reshape(b, -1, heads, hd).transpose(1, 2)
    attn = torch.softmax(qf @ kf.transpose(-2, -1) / math.sqrt(hd), dim=-1)
    out = (attn @ vf).transpose(1, 2).reshape(b, h * w, c)
    out = out.transpose(1, 2).reshape(b, c, h, w)
    if return_weights:
        return out, attn
    return out


class MssBlock(nn.Module):
    """One mixed spectral-spatial attention block with residual output."""

    def __init__(self, cfg: MssBlockConfig):
        super().__init__()
        c = cfg.channels
        self.cfg = cfg
        self.qkv = QkvProjector(cfg)
        self.merge = nn.Conv2d(2 * c, c, kernel_size=1)
        self.ffn = nn.Sequential(
            nn.Conv2d(c, cfg.ffn_ratio * c, kernel_size=1),
            nn.GELU(),
            nn.Conv2d(cfg.ffn_ratio * c, c, kernel_size=1),
        )

    def forward(self, e):
        q1, q2, k1, k2, v1, v2 = self.qkv(e)
        a1 = group_attention(q1, k1, v1, self.cfg.heads_per_group)
        a2 = group_attention(q2, k2, v2, self.cfg.heads_per_group)
        a = self.merge(torch.cat([a1, a2], dim=1))
        return self.ffn(a) + e


class Msst(nn.Module):
    """Stage-stacked backbone producing the hierarchical feature pyramid."""

    def __init__(self, in_channels: int, cfg: MsstConfig | None = None):
        super().__init__()
        self.cfg = cfg or MsstConfig()
        self.stages = nn.ModuleList()
        prev = in_channels
        for i in range(self.cfg.num_stages):
            embed = PatchEmbed(prev, self.cfg.stage_channels[i], self.cfg.stage_strides[i])
            blocks = nn.Sequential(
                *[MssBlock(self.cfg.block_config(i)) for _ in range(self.cfg.stage_blocks[i])]
            )
            self.stages.append(nn.ModuleDict({"embed": embed, "blocks": blocks}))
            prev = self.cfg.stage_channels[i]

    def forward(self, e) -> list[torch.Tensor]:
        h, w = e.shape[2], e.shape[3]
        total = self.cfg.total_stride()
        if h % total or w % total:
            raise ValidationError(
                f"input {h}x{w} must be divisible by the total stride {total}; "
                f"pad to {h + (-h) % total}x{w + (-w) % total}"
            )
        pyramid = []
        x = e
        for stage in self.stages:
            x = stage["embed"](x)
            x = stage["blocks"](x)
            pyramid.append(x)
        return pyramid
