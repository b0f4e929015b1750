"""FPN fusion and saliency prediction."""

import numpy as np
import pytest
import torch

from dmssn.autoencoder import ChannelSchedule
from dmssn.errors import ValidationError
from dmssn.head import FpnConfig, FpnFuse, SaliencyHead
from dmssn.model import DmssnNet, ModelConfig
from dmssn.msst import MsstConfig

torch.manual_seed(0)


def test_fuse_zero_coarse_reduces_to_conv():
    fuse = FpnFuse(3).double()
    x = torch.randn(1, 3, 8, 8, dtype=torch.float64)
    y = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    assert torch.allclose(fuse(x, y), fuse.conv(x), atol=1e-12)


def test_fuse_requires_exact_double_step():
    fuse = FpnFuse(3)
    with pytest.raises(ValidationError, match="2x"):
        fuse(torch.randn(1, 3, 8, 8), torch.randn(1, 3, 3, 3))


def test_fuse_output_matches_fine_dims():
    fuse = FpnFuse(2)
    out = fuse(torch.randn(1, 2, 10, 6), torch.randn(1, 2, 5, 3))
    assert out.shape == (1, 2, 10, 6)


def test_fuse_constant_hand_case():
    """Identity conv on x, constant y: output = x + const everywhere."""
    fuse = FpnFuse(1).double()
    with torch.no_grad():
        fuse.conv.weight.zero_()
        fuse.conv.weight[0, 0, 1, 1] = 1.0  # 3x3 delta kernel
        fuse.conv.bias.zero_()
    x = torch.randn(1, 1, 2, 2, dtype=torch.float64)
    y = torch.full((1, 1, 1, 1), 0.75, dtype=torch.float64)
    expected = x + 0.75  # bilinear upsample of a constant is constant
    assert torch.allclose(fuse(x, y), expected, atol=1e-12)


def test_fuse_linear_in_fine_argument_at_zero_bias():
    fuse = FpnFuse(2).double()
    with torch.no_grad():
        fuse.conv.bias.zero_()
    x1 = torch.randn(1, 2, 6, 6, dtype=torch.float64)
    x2 = torch.randn(1, 2, 6, 6, dtype=torch.float64)
    y = torch.randn(1, 2, 3, 3, dtype=torch.float64)
    lhs = fuse(x1 + x2, y)
    rhs = fuse(x1, y) + fuse(x2, y) - fuse(torch.zeros_like(x1), y)
    assert torch.allclose(lhs, rhs, atol=1e-10)


def _pyramid(sizes, channels, value=None, dtype=torch.float64):
    maps = []
    for (h, w), c in zip(sizes, channels):
        if value is None:
            maps.append(torch.randn(1, c, h, w, dtype=dtype))
        else:
            maps.append(torch.full((1, c, h, w), value, dtype=dtype))
    return maps


def test_predict_shape_and_range():
    head = SaliencyHead([4, 8, 8, 8], FpnConfig(fused_channels=6))
    pyramid = _pyramid([(16, 16), (8, 8), (4, 4), (2, 2)], [4, 8, 8, 8], dtype=torch.float32)
    out = head(pyramid, (64, 64))
    assert out.shape == (1, 1, 64, 64)
    assert 0.0 < float(out.min()) and float(out.max()) < 1.0


def test_zero_pyramid_zero_bias_gives_half():
    head = SaliencyHead([4, 4, 4, 4], FpnConfig(fused_channels=4))
    for module in head.modules():
        if hasattr(module, "bias") and module.bias is not None:
            torch.nn.init.zeros_(module.bias)
    pyramid = _pyramid([(8, 8), (4, 4), (2, 2), (1, 1)], [4, 4, 4, 4], value=0.0)
    out = head([p.float() for p in pyramid], (32, 32))
    assert torch.all(out == 0.5)


def test_wrong_stage_count_rejected():
    head = SaliencyHead([4, 4, 4, 4])
    with pytest.raises(ValidationError, match="4"):
        head.logits(_pyramid([(8, 8), (4, 4)], [4, 4]), (8, 8))
    with pytest.raises(ValidationError, match="4 pyramid stages"):
        SaliencyHead([4, 4])


def test_fusion_chain_constant_oracle():
    """With delta-kernel convs and constant per-level features, the top-down
    chain collapses to plain scalar sums checkable by hand."""
    head = SaliencyHead([1, 1, 1, 1], FpnConfig(fused_channels=1)).double()
    with torch.no_grad():
        for lat in head.laterals:
            lat.weight.fill_(1.0)
            lat.bias.zero_()
        for fuse in (head.fuse32, head.fuse21, head.fuse10):
            fuse.conv.weight.zero_()
            fuse.conv.weight[0, 0, 1, 1] = 1.0
            fuse.conv.bias.zero_()
        head.out_conv.weight.zero_()
        head.out_conv.weight[0, 0, 1, 1] = 1.0
        head.out_conv.bias.zero_()
        head.score.weight.zero_()
        head.score.weight[0, 0, 1, 1] = 1.0
        head.score.bias.zero_()
    v1, v2, v3, v4 = 0.125, -0.5, 0.25, 1.0
    pyramid = [
        torch.full((1, 1, 8, 8), v1, dtype=torch.float64),
        torch.full((1, 1, 4, 4), v2, dtype=torch.float64),
        torch.full((1, 1, 2, 2), v3, dtype=torch.float64),
        torch.full((1, 1, 1, 1), v4, dtype=torch.float64),
    ]
    logits = head.logits(pyramid, (8, 8))
    # sigma(F3,F4)=v3+v4; sigma(F2,.)=v2+v3+v4; final = v1+v2+v3+v4.
    expected = v1 + v2 + v3 + v4
    assert torch.allclose(logits, torch.full_like(logits, expected), atol=1e-12)
    out = head(pyramid, (8, 8))
    squashed = torch.sigmoid(torch.tensor(expected, dtype=torch.float64))
    assert torch.allclose(out, squashed.expand_as(out))


def test_full_model_output_contract():
    config = ModelConfig(
        schedule=ChannelSchedule(8, 6, 5, 4),
        msst=MsstConfig(stage_channels=(4, 4, 4, 4), stage_blocks=(1, 1, 1, 1)),
        fpn=FpnConfig(fused_channels=4),
    )
    net = DmssnNet(config)
    g = torch.rand(2, 8, 64, 64)
    saliency, acts = net(g)
    assert saliency.shape == (2, 1, 64, 64)
    assert float(saliency.min()) > 0.0 and float(saliency.max()) < 1.0
    assert acts.e.shape == (2, 4, 64, 64)


def test_model_config_dict_roundtrip():
    config = ModelConfig(schedule=ChannelSchedule(32, 24, 16, 8))
    restored = ModelConfig.from_dict(config.to_dict())
    assert restored == config
