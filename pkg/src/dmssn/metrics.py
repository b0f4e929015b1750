"""Saliency evaluation suite: MAE, PRE, REC, avgF1, AUC, CC, NSS.

Conventions (the literature leaves them open, so they are pinned here and
echoed in report headers): curves sweep ``n_thresholds`` uniform cutpoints
k/(n+1) in (0, 1); the single-threshold precision/recall default to 0.5;
NSS treats ground-truth-positive pixels as fixations and standardizes with
the population (ddof=0) deviation; F-measure is F1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeMismatchError, ValidationError

DEFAULT_THRESHOLDS = 255
DEFAULT_BINARY_THRESHOLD = 0.5


def _as_pair(y, t) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if y.shape != t.shape:
        raise ShapeMismatchError(f"prediction {y.shape} vs ground truth {t.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValidationError("ground truth must be binary {0, 1}")
    return y, t


class BinaryMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float
    degenerate: bool  # an empty denominator was coerced to 0


def binary_metrics(y, t, threshold: float = DEFAULT_BINARY_THRESHOLD) -> BinaryMetrics:
    """Confusion-matrix precision/recall/F1 of ``y >= threshold`` against binary t."""
    y, t = _as_pair(y, t)
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    pred = y >= threshold
    truth = t >= 0.5
    tp = float(np.logical_and(pred, truth).sum())
    fp = float(np.logical_and(pred, ~truth).sum())
    fn = float(np.logical_and(~pred, truth).sum())
    degenerate = False
    if tp + fp == 0 or tp + fn == 0:
        degenerate = True
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate = True
    return BinaryMetrics(precision, recall, f1, degenerate)


def uniform_thresholds(n: int) -> np.ndarray:
    """n cutpoints k/(n+1), k = 1..n, strictly inside (0, 1)."""
    if n < 1:
        raise ValidationError("need at least one threshold")
    return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


class ThresholdSweep(NamedTuple):
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray


def threshold_sweep(y, t, n_thresholds: int = DEFAULT_THRESHOLDS) -> ThresholdSweep:
    """Vectorized confusion counts over the uniform threshold grid."""
    y, t = _as_pair(y, t)
    truth = t.reshape(-1) >= 0.5
    scores = y.reshape(-1)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("curve metrics need a non-constant ground truth")
    thresholds = uniform_thresholds(n_thresholds)
    pred = scores[None, :] >= thresholds[:, None]  # (T, N)
    tp = np.logical_and(pred, truth[None, :]).sum(axis=1).astype(np.float64)
    fp = pred.sum(axis=1) - tp
    with np.errstate(invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
    recall = tp / n_pos
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    tpr = recall
    fpr = fp / n_neg
    return ThresholdSweep(thresholds, precision, recall, f1, tpr, fpr)


class CurveMetrics(NamedTuple):
    avg_f1: float
    auc: float


def curve_metrics(y, t, n_thresholds: int = DEFAULT_THRESHOLDS) -> CurveMetrics:
    """Threshold-averaged F1 and trapezoidal ROC area (endpoints (0,0), (1,1))."""
    sweep = threshold_sweep(y, t, n_thresholds)
    avg_f1 = float(sweep.f1.mean())
    fpr = np.concatenate([[0.0], sweep.fpr, [1.0]])
    tpr = np.concatenate([[0.0], sweep.tpr, [1.0]])
    order = np.lexsort((tpr, fpr))
    auc = float(np.trapezoid(tpr[order], fpr[order]))
    return CurveMetrics(avg_f1, auc)


class DistributionMetrics(NamedTuple):
    mae: float
    cc: float  # nan when either map is constant
    nss: float  # nan when the prediction is constant
    degenerate: bool


def distribution_metrics(y, t) -> DistributionMetrics:
    """MAE, Pearson correlation, and normalized scanpath saliency.

    MAE is always computed; cc/nss come back as nan with ``degenerate=True``
    when a zero-variance map makes them undefined.
    """
    y, t = _as_pair(y, t)
    mae = float(np.abs(y - t).mean())
    y_var = float(y.var())
    t_var = float(t.var())
    degenerate = y_var == 0.0 or t_var == 0.0
    if degenerate:
        cc = math.nan
        nss = math.nan
    else:
        yc = y - y.mean()
        tc = t - t.mean()
        # Single sqrt of the variance product: identical maps give exactly 1.
        cc = float((yc * tc).mean() / math.sqrt(y_var * t_var))
        nss = float((yc / math.sqrt(y_var))[t >= 0.5].mean())
    return DistributionMetrics(mae, cc, nss, degenerate)


METRIC_ORDER = ("mae", "precision", "recall", "avg_f1", "auc", "cc", "nss")
METRIC_LABELS = {
    "mae": "MAE",
    "precision": "PRE",
    "recall": "REC",
    "avg_f1": "avgF1",
    "auc": "AUC",
    "cc": "CC",
    "nss": "NSS",
}


@dataclass
class EvalReport:
    mae: float
    precision: float
    recall: float
    avg_f1: float
    auc: float
    cc: float
    nss: float
    threshold_count: int = DEFAULT_THRESHOLDS
    binary_threshold: float = DEFAULT_BINARY_THRESHOLD

    def validate(self) -> None:
        bounded = {
            "mae": (0.0, 1.0),
            "precision": (0.0, 1.0),
            "recall": (0.0, 1.0),
            "avg_f1": (0.0, 1.0),
            "auc": (0.0, 1.0),
            "cc": (-1.0, 1.0),
        }
        for name, (lo, hi) in bounded.items():
            v = getattr(self, name)
            if not (lo - 1e-9 <= v <= hi + 1e-9):
                raise ValidationError(f"{name}={v} outside [{lo}, {hi}]")
        if not math.isfinite(self.nss):
            raise ValidationError(f"nss is not finite: {self.nss}")

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_ORDER}

    def to_json(self) -> str:
        doc = dict(self.as_dict())
        doc["threshold_count"] = self.threshold_count
        doc["binary_threshold"] = self.binary_threshold
        return json.dumps(doc)


def evaluate(
    y,
    t,
    n_thresholds: int = DEFAULT_THRESHOLDS,
    binary_threshold: float = DEFAULT_BINARY_THRESHOLD,
) -> EvalReport:
    """Full metric suite for one (prediction, ground truth) pair."""
    single = binary_metrics(y, t, binary_threshold)
    curves = curve_metrics(y, t, n_thresholds)
    dist = distribution_metrics(y, t)
    if dist.degenerate:
        raise ValidationError("cc/nss undefined: a map has zero variance")
    return EvalReport(
        mae=dist.mae,
        precision=single.precision,
        recall=single.recall,
        avg_f1=curves.avg_f1,
        auc=curves.auc,
        cc=dist.cc,
        nss=dist.nss,
        threshold_count=n_thresholds,
        binary_threshold=binary_threshold,
    )


def mean_report(reports: list[EvalReport]) -> EvalReport:
    """Unweighted mean of per-image reports (the usual dataset-level summary)."""
    if not reports:
        raise ValidationError("no reports to average")
    means = {
        name: float(np.mean([getattr(r, name) for r in reports])) for name in METRIC_ORDER
    }
    return EvalReport(
        **means,
        threshold_count=reports[0].threshold_count,
        binary_threshold=reports[0].binary_threshold,
    )


def render_table(report: EvalReport, label: str | None = None) -> str:
    """Aligned-column text table in the conventional metric order."""
    header_note = (
        f"# thresholds={report.threshold_count} (uniform), "
        f"binary threshold={report.binary_threshold:g}, "
        "NSS fixations = ground-truth positives, F-measure = F1"
    )
    names = [METRIC_LABELS[m] for m in METRIC_ORDER]
    values = [f"{getattr(report, m):.4f}" for m in METRIC_ORDER]
    width = max(len(x) for x in names + values) + 2
    lines = [header_note]
    if label:
        lines.append(label)
    lines.append("".join(n.rjust(width) for n in names))
    lines.append("".join(v.rjust(width) for v in values))
    return "\n".join(lines)
