"""Encoding-quality diagnostics: entropy, SCC, reconstruction error."""

import numpy as np
import pytest

from dmssn.diagnostics import (
    EncodingDiagnostics,
    information_entropy,
    reconstruction_error,
    render_diagnostics_table,
    spectral_correlation,
)
from dmssn.errors import ShapeMismatchError, ValidationError


def test_entropy_constant_is_zero_with_flag():
    result = information_entropy(np.full((4, 4, 2), 0.7))
    assert result.bits == 0.0
    assert result.degenerate


def test_entropy_two_equal_bins_is_one_bit():
    x = np.concatenate([np.zeros(500), np.ones(500)])
    result = information_entropy(x, bins=2)
    assert result.bits == pytest.approx(1.0, abs=1e-9)
    assert not result.degenerate


def test_entropy_matches_histogram_oracle(rng):
    x = rng.random((8, 8, 4))
    got = information_entropy(x, bins=16).bits
    counts, _ = np.histogram(x.ravel(), bins=16, range=(x.min(), x.max()))
    p = counts / counts.sum()
    expected = -sum(pi * np.log2(pi) for pi in p if pi > 0)
    assert got == pytest.approx(expected, abs=1e-12)


def test_entropy_permutation_invariant(rng):
    x = rng.random(256)
    shuffled = rng.permutation(x)
    assert information_entropy(x, 32).bits == pytest.approx(
        information_entropy(shuffled, 32).bits, abs=1e-12
    )


def test_entropy_nonincreasing_under_quantization(rng):
    x = rng.random(4096)
    fine = information_entropy(x, 256).bits
    for levels in (64, 16, 4):
        quantized = np.round(x * (levels - 1)) / (levels - 1)
        assert information_entropy(quantized, 256).bits <= fine + 1e-9
        fine = information_entropy(quantized, 256).bits


def test_entropy_validates_bins():
    with pytest.raises(ValidationError, match="bins"):
        information_entropy(np.ones(4), bins=1)


def test_scc_identity_and_negation(rng):
    orig = rng.random((6, 6, 4))
    assert spectral_correlation(orig, orig).value == pytest.approx(1.0, abs=1e-9)
    assert spectral_correlation(-orig, orig).value == pytest.approx(1.0, abs=1e-9)


def test_scc_matches_pearson_oracle(rng):
    enc = rng.random((5, 5, 3))
    orig = rng.random((5, 5, 4))
    got = spectral_correlation(enc, orig)
    best = []
    for b in range(4):
        band = orig[:, :, b].ravel()
        corrs = [
            abs(np.corrcoef(band, enc[:, :, j].ravel())[0, 1]) for j in range(3)
        ]
        best.append(max(corrs))
    assert got.value == pytest.approx(np.mean(best), abs=1e-9)
    assert got.skipped_bands == 0


def test_scc_skips_constant_bands(rng):
    enc = rng.random((4, 4, 2))
    orig = rng.random((4, 4, 3))
    orig[:, :, 1] = 0.5
    assert spectral_correlation(enc, orig).skipped_bands == 1


def test_scc_spatial_mismatch():
    with pytest.raises(ShapeMismatchError):
        spectral_correlation(np.zeros((4, 4, 2)), np.zeros((5, 4, 2)))


def test_reconstruction_error_cases(rng):
    x = rng.random((4, 4, 3))
    assert reconstruction_error(x, x) == (0.0, 0.0)
    mse, mae = reconstruction_error(x + 0.1, x)
    assert mse == pytest.approx(0.01, abs=1e-12)
    assert mae == pytest.approx(0.1, abs=1e-12)
    # symmetric in its arguments
    assert reconstruction_error(x, x + 0.1) == pytest.approx((mse, mae), abs=1e-15)


def test_diagnostics_table_rendering():
    rows = [
        EncodingDiagnostics(method="Original HSI", ie=4.67),
        EncodingDiagnostics(
            method="Distilled Student", ie=3.16, scc=0.08, throughput=10.0,
            param_count=1234, recon_mse=0.11, recon_mae=0.18,
        ),
    ]
    for row in rows:
        row.validate()
    table = render_diagnostics_table(rows)
    lines = table.splitlines()
    assert lines[0].split()[:3] == ["Method", "IE", "SCC"]
    assert "Distilled Student" in lines[2]
    assert "-" in lines[1]  # missing columns render as dashes


def test_diagnostics_validation():
    with pytest.raises(ValidationError, match="entropy"):
        EncodingDiagnostics(method="x", ie=-1.0).validate()
