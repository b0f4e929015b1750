"""Report rendering: matplotlib figures written next to delimited data files.

Every CLI path that reports something emits both a machine-readable table
(TSV/JSON) and, where it helps a human, a PNG figure: loss curves for
training, PR/ROC curves for evaluation, a pseudo-color montage for inference,
and a bar comparison for the encoder diagnostics.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import HyperCube
from .diagnostics import EncodingDiagnostics
from .metrics import METRIC_LABELS, METRIC_ORDER, EvalReport, ThresholdSweep


def write_eval_tsv(reports: dict[str, EvalReport], path: str | Path) -> None:
    """One row per evaluated image (plus the label column)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["image"] + [METRIC_LABELS[m] for m in METRIC_ORDER])
        for label, report in reports.items():
            writer.writerow([label] + [f"{getattr(report, m):.6f}" for m in METRIC_ORDER])


def write_sweep_tsv(sweep: ThresholdSweep, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["threshold", "precision", "recall", "f1", "tpr", "fpr"])
        for row in zip(sweep.thresholds, sweep.precision, sweep.recall, sweep.f1, sweep.tpr, sweep.fpr):
            writer.writerow([f"{v:.6f}" for v in row])


def save_pr_roc_figure(sweep: ThresholdSweep, path: str | Path, title: str = "") -> None:
    fig, (ax_pr, ax_roc) = plt.subplots(1, 2, figsize=(9, 4))
    ax_pr.plot(sweep.recall, sweep.precision, marker=".", markersize=2, lw=1)
    ax_pr.set_xlabel("recall")
    ax_pr.set_ylabel("precision")
    ax_pr.set_title("precision-recall")
    ax_pr.set_xlim(0, 1)
    ax_pr.set_ylim(0, 1.02)
    fpr = np.concatenate([[0.0], sweep.fpr[::-1], [1.0]])
    tpr = np.concatenate([[0.0], sweep.tpr[::-1], [1.0]])
    ax_roc.plot(fpr, tpr, lw=1)
    ax_roc.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax_roc.set_xlabel("false positive rate")
    ax_roc.set_ylabel("true positive rate")
    ax_roc.set_title("ROC")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def pseudo_color(cube: HyperCube) -> np.ndarray:
    """(H, W, 3) composite from three spread-out bands, each stretched to [0, 1]."""
    c = cube.bands
    picks = [int(round(f * (c - 1))) for f in (0.75, 0.5, 0.25)]
    rgb = cube.values[:, :, picks].astype(np.float64)
    for k in range(3):
        band = rgb[:, :, k]
        lo, hi = band.min(), band.max()
        rgb[:, :, k] = (band - lo) / (hi - lo) if hi > lo else 0.0
    return rgb


def save_montage(
    cube: HyperCube,
    prediction: np.ndarray,
    path: str | Path,
    ground_truth: np.ndarray | None = None,
) -> None:
    """Side-by-side pseudo-color / (ground truth) / prediction panel."""
    panels = [("pseudo-color", pseudo_color(cube))]
    if ground_truth is not None:
        panels.append(("ground truth", ground_truth))
    panels.append(("prediction", prediction))
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.4))
    if len(panels) == 1:
        axes = [axes]
    for ax, (name, image) in zip(axes, panels):
        if image.ndim == 2:
            ax.imshow(image, cmap="gray", vmin=0, vmax=1)
        else:
            ax.imshow(image)
        ax.set_title(name)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curves(history: list[dict], path: str | Path) -> None:
    """Per-step component curves from the JSONL-style training records."""
    if not history:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [r["step"] for r in history]
    for key, label in (("L", "total"), ("L_S", "recon"), ("L_sod", "saliency"),
                       ("L_dis", "distill"), ("L_T", "teacher recon")):
        if key in history[0]:
            ax.plot(steps, [r[key] for r in history], lw=1, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_diagnostics_tsv(rows: list[EncodingDiagnostics], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["method", "ie", "scc", "speed", "param_count", "mse", "mae"])
        for row in rows:
            writer.writerow(
                [
                    row.method,
                    f"{row.ie:.4f}",
                    "" if row.scc is None else f"{row.scc:.4f}",
                    "" if row.throughput is None else f"{row.throughput:.2f}",
                    "" if row.param_count is None else row.param_count,
                    "" if row.recon_mse is None else f"{row.recon_mse:.6f}",
                    "" if row.recon_mae is None else f"{row.recon_mae:.6f}",
                ]
            )


def save_diagnostics_figure(rows: list[EncodingDiagnostics], path: str | Path) -> None:
    """Entropy/SCC bars on the left, reconstruction errors on the right."""
    fig, (ax_enc, ax_rec) = plt.subplots(1, 2, figsize=(10, 4))
    names = [r.method for r in rows]
    x = np.arange(len(rows))
    ax_enc.bar(x - 0.2, [r.ie for r in rows], width=0.4, label="IE (bits)")
    ax_enc.bar(
        x + 0.2,
        [r.scc if r.scc is not None else 0.0 for r in rows],
        width=0.4,
        label="SCC",
    )
    ax_enc.set_xticks(x, names, rotation=20, ha="right")
    ax_enc.set_title("encoding quality")
    ax_enc.legend()
    with_err = [(i, r) for i, r in enumerate(rows) if r.recon_mse is not None]
    if with_err:
        xe = np.arange(len(with_err))
        ax_rec.bar(xe - 0.2, [r.recon_mse for _, r in with_err], width=0.4, label="MSE")
        ax_rec.bar(xe + 0.2, [r.recon_mae for _, r in with_err], width=0.4, label="MAE")
        ax_rec.set_xticks(xe, [r.method for _, r in with_err], rotation=20, ha="right")
    ax_rec.set_title("reconstruction error")
    ax_rec.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
