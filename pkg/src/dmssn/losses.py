"""Training objectives: reconstruction, distillation, saliency, and the hybrid total.

All functions take channels-first tensors ``(B, C, H, W)`` (masks ``(B, 1, H, W)``)
and reduce to scalars. Teacher activations entering the distillation loss are
detached, so no gradient ever reaches the teacher.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ShapeMismatchError, ValidationError

HUBER_DELTA = 1.0
SAM_EPS = 1e-8  # zero-norm guard in angle denominators
BCE_EPS = 1e-7
_POLE_EPS = 1e-7  # gradient guard at cos = +-1

DISTILL_PAIR_NAMES = ("enc_mid", "enc_final", "dec_mid")


def _check_same_shape(x: torch.Tensor, y: torch.Tensor, what: str) -> None:
    if x.shape != y.shape:
        raise ShapeMismatchError(f"{what}: shapes {tuple(x.shape)} vs {tuple(y.shape)}")


def _pixel_cosine(x: torch.Tensor, y: torch.Tensor, absolute: bool) -> torch.Tensor:
    """Per-pixel cosine of the spectral angle, shape (B, H, W).

    The denominator is floored at SAM_EPS only to guard zero-norm pixels; the
    ratio is clamped into [-1, 1] so identical inputs give an angle of exactly 0.
    """
    dot = (x * y).sum(dim=1)
    # One sqrt of the squared-norm product: when x == y all three reductions
    # are the same sum, so the ratio is exactly 1 and the angle exactly 0.
    norms = ((x * x).sum(dim=1) * (y * y).sum(dim=1)).sqrt()
    cos = dot / norms.clamp_min(SAM_EPS)
    if absolute:
        cos = cos.abs()
    return cos.clamp(-1.0, 1.0)


def _arccos_pole_safe(cos: torch.Tensor) -> torch.Tensor:
    """arccos with the exact forward value but a capped gradient at the poles.

    arccos' diverges at cos = +-1 although the angle's gradient w.r.t. the
    underlying vectors stays bounded there; collinear pixels would otherwise
    emit inf/NaN into the backward pass late in training.
    """
    safe = cos.clamp(-1.0 + _POLE_EPS, 1.0 - _POLE_EPS)
    return torch.arccos(safe) + (torch.arccos(cos) - torch.arccos(safe)).detach()


def huber_term(x: torch.Tensor, y: torch.Tensor, delta: float = HUBER_DELTA) -> torch.Tensor:
    return F.huber_loss(x, y, delta=delta)


def sam_term(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel spectral angle, invariant to positive per-pixel scaling."""
    return _arccos_pole_safe(_pixel_cosine(x, y, absolute=False)).mean()


def hs_loss(x: torch.Tensor, y: torch.Tensor, delta: float = HUBER_DELTA) -> torch.Tensor:
    """Huber + spectral-angle reconstruction loss (unit term weights)."""
    _check_same_shape(x, y, "hs_loss")
    return huber_term(x, y, delta) + sam_term(x, y)


def mixing_distance(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Spectral-spatial mixing distance between two feature maps (diagnostic only).

    Computed exactly as defined: the Frobenius distance minus the summed
    per-pixel arccos of absolute cosine similarity, divided by the pixel
    count. Aligned pixels contribute arccos(1) = 0, so the value can be
    negative; it is never used as a training gradient.
    """
    _check_same_shape(x, y, "mixing_distance")
    if x.dim() == 3:
        x = x.unsqueeze(0)
        y = y.unsqueeze(0)
    n_pix = x.shape[2] * x.shape[3]
    frob = (x - y).flatten(1).norm(dim=1)
    angles = _arccos_pole_safe(_pixel_cosine(x, y, absolute=True)).sum(dim=(1, 2))
    return ((frob - angles) / n_pix).mean()


def distillation_loss(
    teacher_pairs: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    student_pairs: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    delta: float = HUBER_DELTA,
) -> tuple[torch.Tensor, list[float]]:
    """Sum of hs_loss over the three guidance pairs; teacher side detached.

    Returns the scalar plus the three per-pair values for logging.
    """
    if len(teacher_pairs) != 3 or len(student_pairs) != 3:
        raise ValidationError("distillation expects exactly three feature-map pairs")
    terms = []
    for name, t, s in zip(DISTILL_PAIR_NAMES, teacher_pairs, student_pairs):
        if t.shape != s.shape:
            raise ShapeMismatchError(
                f"distillation pair {name!r}: teacher {tuple(t.shape)} vs "
                f"student {tuple(s.shape)}"
            )
        terms.append(hs_loss(t.detach(), s, delta))
    total = terms[0] + terms[1] + terms[2]
    return total, [float(t.detach()) for t in terms]


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    window = torch.outer(g, g)
    return (window / window.sum()).reshape(1, 1, size, size)


def ssim_index(
    y: torch.Tensor,
    t: torch.Tensor,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> torch.Tensor:
    """Mean SSIM over an 11x11 Gaussian window, dynamic range 1."""
    _check_same_shape(y, t, "ssim")
    window = _gaussian_window(window_size, sigma, y.dtype, y.device)
    pad = window_size // 2
    mu_y = F.conv2d(y, window, padding=pad)
    mu_t = F.conv2d(t, window, padding=pad)
    var_y = F.conv2d(y * y, window, padding=pad) - mu_y**2
    var_t = F.conv2d(t * t, window, padding=pad) - mu_t**2
    cov = F.conv2d(y * t, window, padding=pad) - mu_y * mu_t
    c1, c2 = k1**2, k2**2
    num = (2 * mu_y * mu_t + c1) * (2 * cov + c2)
    den = (mu_y**2 + mu_t**2 + c1) * (var_y + var_t + c2)
    return (num / den).mean()


def bce_term(
    y: torch.Tensor,
    t: torch.Tensor,
    eps: float = BCE_EPS,
    logits: torch.Tensor | None = None,
) -> torch.Tensor:
    """Binary cross-entropy; pass the pre-squash ``logits`` during training so
    the gradient survives sigmoid saturation (the clamped form goes flat)."""
    if logits is not None:
        return F.binary_cross_entropy_with_logits(logits, t)
    yc = y.clamp(eps, 1.0 - eps)
    return -(t * yc.log() + (1.0 - t) * (1.0 - yc).log()).mean()


def soft_iou(y: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Probability-weighted IoU: sum(y*t) / sum(y + t - y*t).

    For a binary target this equals sum(min(y,t)) / sum(max(y,t)).
    """
    inter = (y * t).sum()
    union = (y + t - y * t).sum()
    return inter / union.clamp_min(1e-12)


def sod_loss(
    y: torch.Tensor,
    t: torch.Tensor,
    eps: float = BCE_EPS,
    logits: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """BCE + (1 - SSIM) + (1 - soft IoU) between a predicted map and binary truth."""
    _check_same_shape(y, t, "sod_loss")
    uniq = torch.unique(t)
    if not bool(((uniq == 0) | (uniq == 1)).all()):
        raise ValidationError("sod_loss ground truth must be binary {0, 1}")
    bce = bce_term(y, t, eps, logits=logits)
    ssim = 1.0 - ssim_index(y, t)
    iou = 1.0 - soft_iou(y, t)
    total = bce + ssim + iou
    parts = {"bce": float(bce.detach()), "ssim": float(ssim.detach()), "iou": float(iou.detach())}
    return total, parts


@dataclass
class LossReport:
    """Per-step scalar breakdown of the hybrid loss; total is the exact sum."""

    recon: float
    sod: float
    dis: float
    components: dict[str, float] = field(default_factory=dict)
    dis_pairs: list[float] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.recon + self.sod + self.dis

    def validate(self) -> None:
        for name, value in [("recon", self.recon), ("sod", self.sod), ("dis", self.dis)]:
            if not math.isfinite(value):
                raise ValidationError(f"loss component {name} is not finite: {value}")

    def to_json(self, step: int | None = None) -> str:
        doc: dict = {}
        if step is not None:
            doc["step"] = step
        doc.update(
            {"L_S": self.recon, "L_sod": self.sod, "L_dis": self.dis, "L": self.total}
        )
        doc.update(self.components)
        if self.dis_pairs:
            doc["dis_pairs"] = self.dis_pairs
        return json.dumps(doc)


def total_loss(recon: torch.Tensor, sod: torch.Tensor, dis: torch.Tensor) -> torch.Tensor:
    """Unweighted hybrid sum of the three objectives."""
    return recon + sod + dis
