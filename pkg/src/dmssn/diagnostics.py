"""Encoding-quality diagnostics: entropy, spectral correlation, reconstruction error.

SCC has no standard formula, so the convention here is: for every original
band, take the largest absolute Pearson correlation (across pixels) against
any encoded channel, and average those maxima over bands. Values are only
meaningful for ordering encoders against each other.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .errors import ShapeMismatchError, ValidationError

DEFAULT_BINS = 256


class EntropyResult(NamedTuple):
    bits: float
    degenerate: bool  # constant input, entropy pinned to 0


def information_entropy(x: np.ndarray, bins: int = DEFAULT_BINS) -> EntropyResult:
    """Shannon entropy (base 2) of the value histogram over uniform bins."""
    if bins < 2:
        raise ValidationError(f"need at least 2 bins, got {bins}")
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.isfinite(flat).all():
        raise ValidationError("entropy input contains non-finite values")
    lo, hi = float(flat.min()), float(flat.max())
    if hi <= lo:
        return EntropyResult(0.0, True)
    counts, _ = np.histogram(flat, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / flat.size
    return EntropyResult(float(-(p * np.log2(p)).sum()), False)


class SccResult(NamedTuple):
    value: float
    skipped_bands: int  # zero-variance original bands excluded from the mean


def spectral_correlation(encoded: np.ndarray, original: np.ndarray) -> SccResult:
    """Mean over original bands of the best |Pearson| match among encoded channels."""
    encoded = np.asarray(encoded, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    if encoded.shape[:2] != original.shape[:2]:
        raise ShapeMismatchError(
            f"spatial dims differ: {encoded.shape[:2]} vs {original.shape[:2]}"
        )
    enc = encoded.reshape(-1, encoded.shape[2]).T  # (C', N)
    orig = original.reshape(-1, original.shape[2]).T  # (C, N)
    enc_c = enc - enc.mean(axis=1, keepdims=True)
    orig_c = orig - orig.mean(axis=1, keepdims=True)
    enc_sd = enc_c.std(axis=1)
    orig_sd = orig_c.std(axis=1)
    usable_enc = enc_sd > 0
    if not usable_enc.any():
        raise ValidationError("every encoded channel is constant; SCC undefined")
    best: list[float] = []
    skipped = 0
    denom = enc_sd[usable_enc] * enc.shape[1]
    for band, sd in zip(orig_c, orig_sd):
        if sd == 0:
            skipped += 1
            continue
        corr = np.abs(enc_c[usable_enc] @ band) / (denom * sd)
        best.append(float(corr.max()))
    if not best:
        raise ValidationError("every original band is constant; SCC undefined")
    return SccResult(float(np.mean(best)), skipped)


def reconstruction_error(decoded: np.ndarray, original: np.ndarray) -> tuple[float, float]:
    """(MSE, MAE) between a reconstruction and the original array."""
    decoded = np.asarray(decoded, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    if decoded.shape != original.shape:
        raise ShapeMismatchError(f"shapes differ: {decoded.shape} vs {original.shape}")
    diff = decoded - original
    return float((diff**2).mean()), float(np.abs(diff).mean())


def measure_throughput(fn, n_runs: int = 10, warmup: int = 2) -> float:
    """Median images/second of ``fn()`` over warm runs, pinned to one thread."""
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        for _ in range(warmup):
            fn()
        times = []
        for _ in range(n_runs):
            start = time.perf_counter()
            fn()
            times.append(time.perf_counter() - start)
    finally:
        torch.set_num_threads(prev_threads)
    return 1.0 / float(np.median(times))


@dataclass
class EncodingDiagnostics:
    """One row of the encoder-comparison table."""

    method: str
    ie: float
    scc: float | None = None
    throughput: float | None = None  # images / second
    param_count: int | None = None
    recon_mse: float | None = None
    recon_mae: float | None = None

    def validate(self) -> None:
        if self.ie < 0:
            raise ValidationError(f"information entropy must be >= 0, got {self.ie}")
        for name in ("recon_mse", "recon_mae"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValidationError(f"{name} must be >= 0, got {v}")

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


_COLUMNS = (
    ("IE", "ie", "{:.3f}"),
    ("SCC", "scc", "{:.3f}"),
    ("Speed", "throughput", "{:.1f} im/s"),
    ("#Param", "param_count", "{:d}"),
    ("MSE", "recon_mse", "{:.4f}"),
    ("MAE", "recon_mae", "{:.4f}"),
)


def render_diagnostics_table(rows: list[EncodingDiagnostics]) -> str:
    """Aligned text table, columns in the conventional comparison order."""
    header = ["Method"] + [label for label, _, _ in _COLUMNS]
    body = []
    for row in rows:
        cells = [row.method]
        for _, attr, fmt in _COLUMNS:
            value = getattr(row, attr)
            cells.append("-" if value is None else fmt.format(value))
        body.append(cells)
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in [header] + body]
    return "\n".join(lines)
