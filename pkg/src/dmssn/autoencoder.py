"""Teacher and student autoencoders for spectral dimension reduction.

Both map ``(B, C, H, W)`` to an encoded ``(B, C', H, W)`` and back, never
touching spatial resolution. The teacher is a deep dual-branch network (three
encoding blocks with channel-reduction layers, mirrored convolutional
decoder); the student is two per-pixel linear layers each way. Forward passes
return the named intermediate activations that the distillation loss pairs up:
teacher ``(e1, e2, e, d2, d1, d)`` against student ``(e1, e, d1, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from .errors import ValidationError


@dataclass(frozen=True)
class ChannelSchedule:
    """Channel widths along the encoder: encoded < mid < wide < bands."""

    bands: int
    wide: int  # teacher stage-1 width (C1)
    mid: int  # teacher stage-2 / student hidden width (C2)
    encoded: int  # bottleneck width (C')

    def __post_init__(self):
        widths = (self.encoded, self.mid, self.wide, self.bands)
        if any(w < 1 for w in widths):
            raise ValidationError(f"all channel widths must be >= 1, got {widths}")
        if not (self.encoded < self.mid < self.wide < self.bands):
            raise ValidationError(
                "channel schedule must satisfy encoded < mid < wide < bands, "
                f"got {self.encoded} < {self.mid} < {self.wide} < {self.bands}"
            )


class TeacherActivations(NamedTuple):
    e1: torch.Tensor  # (B, wide, H, W)
    e2: torch.Tensor  # (B, mid, H, W)
    e: torch.Tensor  # (B, encoded, H, W)
    d2: torch.Tensor  # (B, mid, H, W)
    d1: torch.Tensor  # (B, wide, H, W)
    d: torch.Tensor  # (B, bands, H, W)


class StudentActivations(NamedTuple):
    e1: torch.Tensor  # (B, mid, H, W)
    e: torch.Tensor  # (B, encoded, H, W)
    d1: torch.Tensor  # (B, mid, H, W)
    d: torch.Tensor  # (B, bands, H, W)


class SharedSpatialConv(nn.Module):
    """3x3 spatial convolution with one kernel shared across all channels.

    Each channel is filtered by the same 3x3 weights (plus a shared scalar
    bias), so permuting input channels permutes outputs identically.
    """

    def __init__(self, kernel_size=3):
        super().__init__()
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(torch.empty(1, 1, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(1))
        nn.init.kaiming_uniform_(self.weight, a=5**0.5)

    def forward(self, x):
        b, c, h, w = x.shape
        flat = x.reshape(b * c, 1, h, w)
        out = nn.functional.conv2d(flat, self.weight, padding=self.kernel_size // 2)
        return out.reshape(b, c, h, w) + self.bias


class EncodingBlock(nn.Module):
    """Dual-branch block: per-pixel spectral path and shared spatial path, fused.

    The spectral branch is a 1x1 convolution (pure per-pixel channel mixing);
    the spatial branch filters every channel with the same 3x3 kernel. Branch
    outputs pass a GELU, are concatenated on channels, and a linear 1x1
    projection sets the output width. Spatial size is always preserved.
    """

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.spectral = nn.Conv2d(in_channels, in_channels, kernel_size=1)
        self.spatial = SharedSpatialConv()
        self.act = nn.GELU()
        self.fuse = nn.Conv2d(2 * in_channels, out_channels, kernel_size=1)

    def forward(self, x):
        f_spe = self.act(self.spectral(x))
        f_spa = self.act(self.spatial(x))
        return self.fuse(torch.cat([f_spe, f_spa], dim=1))


class TeacherAutoencoder(nn.Module):
    """Deep dual-branch autoencoder; six named activations per forward pass."""

    def __init__(self, schedule: ChannelSchedule):
        super().__init__()
        self.schedule = schedule
        c, c1, c2, ce = schedule.bands, schedule.wide, schedule.mid, schedule.encoded
        self.enc_blocks = nn.ModuleList(
            [EncodingBlock(c, c), EncodingBlock(c1, c1), EncodingBlock(c2, c2)]
        )
        self.enc_reduce = nn.ModuleList(
            [
                nn.Conv2d(c, c1, kernel_size=1),
                nn.Conv2d(c1, c2, kernel_size=1),
                nn.Conv2d(c2, ce, kernel_size=1),
            ]
        )
        self.dec_convs = nn.ModuleList(
            [
                nn.Conv2d(ce, c2, kernel_size=3, padding=1),
                nn.Conv2d(c2, c1, kernel_size=3, padding=1),
                nn.Conv2d(c1, c, kernel_size=3, padding=1),
            ]
        )
        self.act = nn.GELU()

    def forward(self, g) -> TeacherActivations:
        # GELUs sit strictly between stages; the bottleneck and the
        # reconstruction output stay linear (unconstrained range).
        x = g
        stage_outputs = []
        for i, (block, reduce) in enumerate(zip(self.enc_blocks, self.enc_reduce)):
            if i > 0:
                x = self.act(x)
            x = reduce(block(x))
            stage_outputs.append(x)
        e1, e2, e = stage_outputs
        dec_outputs = []
        for i, conv in enumerate(self.dec_convs):
            if i > 0:
                x = self.act(x)
            x = conv(x)
            dec_outputs.append(x)
        d2, d1, d = dec_outputs
        return TeacherActivations(e1, e2, e, d2, d1, d)

    def encode(self, g):
        return self.forward(g).e


class StudentAutoencoder(nn.Module):
    """Two per-pixel linear layers each way; spatially permutation-equivariant."""

    def __init__(self, schedule: ChannelSchedule):
        super().__init__()
        self.schedule = schedule
        c, c2, ce = schedule.bands, schedule.mid, schedule.encoded
        self.enc1 = nn.Conv2d(c, c2, kernel_size=1)
        self.enc2 = nn.Conv2d(c2, ce, kernel_size=1)
        self.dec1 = nn.Conv2d(ce, c2, kernel_size=1)
        self.dec2 = nn.Conv2d(c2, c, kernel_size=1)
        self.act = nn.GELU()

    def forward(self, g) -> StudentActivations:
        e1 = self.enc1(g)
        e = self.enc2(self.act(e1))
        d1 = self.dec1(e)
        d = self.dec2(self.act(d1))
        return StudentActivations(e1, e, d1, d)

    def encode(self, g):
        return self.forward(g).e


def distillation_pairs(
    teacher: TeacherActivations, student: StudentActivations
) -> tuple[tuple[torch.Tensor, ...], tuple[torch.Tensor, ...]]:
    """The three guidance groups: (teacher e2, e, d2) vs (student e1, e, d1)."""
    return (teacher.e2, teacher.e, teacher.d2), (student.e1, student.e, student.d1)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
