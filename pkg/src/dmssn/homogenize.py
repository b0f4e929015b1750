"""Spectral homogenization: per-image GMM material model and mean-curve replacement.

Pixels are modeled by an M-component Gaussian mixture over spectra with
diagonal covariances, fitted by EM from a k-means++-style initialization.
Every pixel is assigned to its maximum-posterior component and replaced by
the mean spectrum of all pixels sharing that assignment, which zeroes
within-class spectral variance while preserving class means.

Also provides the PCA baseline used for dimension-reduction comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .data import HyperCube
from .errors import ShapeMismatchError, ValidationError

# The paper-scale dissertation default; desk-scale callers pass n_materials + 2.
DEFAULT_COMPONENTS = 50
MAX_FIT_PIXELS = 20_000


@dataclass
class GmmOptions:
    max_iter: int = 100
    tol: float = 1e-6
    variance_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.variance_floor <= 0:
            raise ValidationError("variance_floor must be > 0")


@dataclass
class GmmModel:
    """Diagonal-covariance mixture: weights (M,), means (M, C), variances (M, C)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_trace: list[float] = field(default_factory=list)
    reseed_events: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValidationError(f"mixture weights sum to {self.weights.sum()}, not 1")
        if (self.weights < 0).any():
            raise ValidationError("mixture weights must be nonnegative")
        if (self.variances <= 0).any():
            raise ValidationError("variances must stay above the floor (> 0)")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def n_bands(self) -> int:
        return self.means.shape[1]

    def log_prob(self, pixels: np.ndarray) -> np.ndarray:
        """Per-component joint log density: (N, M) of log alpha_k + log N(x | mu_k, var_k)."""
        x = pixels[:, None, :]  # (N, 1, C)
        var = self.variances[None, :, :]
        log_norm = -0.5 * (np.log(2.0 * np.pi * var)).sum(axis=2)  # (1, M)
        quad = -0.5 * ((x - self.means[None]) ** 2 / var).sum(axis=2)  # (N, M)
        return np.log(self.weights)[None, :] + log_norm + quad

    def responsibilities(self, pixels: np.ndarray) -> tuple[np.ndarray, float]:
        """Posterior (N, M) responsibilities and the dataset log-likelihood."""
        joint = self.log_prob(pixels)
        norm = logsumexp(joint, axis=1, keepdims=True)
        return np.exp(joint - norm), float(norm.sum())

    def to_json(self) -> str:
        return json.dumps(
            {
                "M": self.n_components,
                "alpha": self.weights.tolist(),
                "mu": self.means.tolist(),
                "var": self.variances.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GmmModel":
        doc = json.loads(text)
        model = cls(np.array(doc["alpha"]), np.array(doc["mu"]), np.array(doc["var"]))
        if model.n_components != doc["M"]:
            raise ValidationError("serialized M disagrees with alpha length")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "GmmModel":
        return cls.from_json(Path(path).read_text())


def _kmeanspp_init(pixels: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: next center drawn proportional to squared distance."""
    n = pixels.shape[0]
    centers = [pixels[rng.integers(n)]]
    d2 = ((pixels - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, m):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a center
            centers.append(pixels[rng.integers(n)])
            continue
        probs = d2 / total
        idx = rng.choice(n, p=probs)
        centers.append(pixels[idx])
        d2 = np.minimum(d2, ((pixels - centers[-1]) ** 2).sum(axis=1))
    return np.stack(centers)


def fit_gmm(
    pixels: np.ndarray,
    n_components: int | None = None,
    opts: GmmOptions | None = None,
) -> GmmModel:
    """EM-fit a diagonal GMM to (N, C) spectra.

    Stops when the log-likelihood improves by less than ``opts.tol`` or after
    ``opts.max_iter`` iterations; the trace it records is nondecreasing. An
    emptied component is re-seeded from the point farthest from all means and
    the iteration index recorded in ``reseed_events``.
    """
    opts = opts or GmmOptions()
    m = DEFAULT_COMPONENTS if n_components is None else n_components
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ValidationError(f"pixels must be (N, C), got shape {pixels.shape}")
    n, c = pixels.shape
    if m < 1 or n < m:
        raise ValidationError(f"need at least M={m} pixels, got {n}")

    rng = np.random.default_rng(opts.seed)
    if n > MAX_FIT_PIXELS:
        pixels = pixels[rng.choice(n, size=MAX_FIT_PIXELS, replace=False)]
        n = MAX_FIT_PIXELS

    global_var = np.maximum(pixels.var(axis=0), opts.variance_floor)
    model = GmmModel(
        weights=np.full(m, 1.0 / m),
        means=_kmeanspp_init(pixels, m, rng),
        variances=np.tile(global_var, (m, 1)),
    )

    prev_ll = -np.inf
    for iteration in range(opts.max_iter):
        resp, ll = model.responsibilities(pixels)
        model.log_likelihood_trace.append(ll)

        counts = resp.sum(axis=0)  # (M,)
        empty = counts < 1e-10
        if empty.any():
            # Re-seed dead components from the farthest point; never silent NaN.
            model.reseed_events.append(iteration)
            d2 = ((pixels[:, None, :] - model.means[None]) ** 2).sum(axis=2).min(axis=1)
            for k in np.flatnonzero(empty):
                far = int(np.argmax(d2))
                model.means[k] = pixels[far]
                model.variances[k] = global_var
                resp[far, :] = 0.0
                resp[far, k] = 1.0
                d2[far] = 0.0
            counts = resp.sum(axis=0)

        weights = counts / counts.sum()
        means = (resp.T @ pixels) / counts[:, None]
        sq = resp.T @ (pixels**2) / counts[:, None]
        variances = np.maximum(sq - means**2, opts.variance_floor)
        model = GmmModel(
            weights,
            means,
            variances,
            log_likelihood_trace=model.log_likelihood_trace,
            reseed_events=model.reseed_events,
        )

        if ll - prev_ll < opts.tol and iteration > 0:
            break
        prev_ll = ll
    return model


def assign_materials(cube: HyperCube, model: GmmModel) -> np.ndarray:
    """(H, W) int64 argmax-posterior label map; ties break to the lowest index."""
    if cube.bands != model.n_bands:
        raise ShapeMismatchError(
            f"cube has {cube.bands} bands, model expects {model.n_bands}"
        )
    flat = cube.values.reshape(-1, cube.bands).astype(np.float64)
    joint = model.log_prob(flat)
    return joint.argmax(axis=1).reshape(cube.height, cube.width)


def homogenize(cube: HyperCube, labels: np.ndarray) -> HyperCube:
    """Replace each pixel's spectrum by the mean spectrum of its label class.

    Accumulates in float64 and writes the identical mean vector to every
    member pixel, so within-class variance of the output is exactly zero and
    re-homogenizing under the same labels is a fixed point.
    """
    if labels.shape != (cube.height, cube.width):
        raise ShapeMismatchError(
            f"labels {labels.shape} do not match cube {cube.height}x{cube.width}"
        )
    flat = cube.values.reshape(-1, cube.bands)
    flat_labels = labels.reshape(-1)
    out = np.empty_like(flat)
    for label in np.unique(flat_labels):
        members = flat_labels == label
        mean = flat[members].astype(np.float64).mean(axis=0)
        out[members] = mean.astype(flat.dtype)
    return HyperCube(out.reshape(cube.shape), band_centers=cube.band_centers)


@dataclass
class PcaResult:
    """Top-k principal-component projection of a cube's spectra."""

    features: np.ndarray  # (H, W, k)
    components: np.ndarray  # (k, C), rows are eigenvectors
    mean: np.ndarray  # (C,)
    explained_variance_ratio: np.ndarray  # (k,)

    def reconstruct(self) -> np.ndarray:
        """(H, W, C) reconstruction from the kept components (plus the mean)."""
        h, w, k = self.features.shape
        flat = self.features.reshape(-1, k) @ self.components + self.mean
        return flat.reshape(h, w, -1)


def pca_reduce(cube: HyperCube, k: int) -> PcaResult:
    """Project spectra onto the top-k eigenvectors of the band covariance."""
    if k < 1 or k > cube.bands:
        raise ValidationError(f"k must lie in [1, {cube.bands}], got {k}")
    flat = cube.values.reshape(-1, cube.bands).astype(np.float64)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / max(flat.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    total = eigvals.sum()
    ratios = eigvals[:k] / total if total > 0 else np.zeros(k)
    components = eigvecs[:, :k].T
    features = (centered @ components.T).reshape(cube.height, cube.width, k)
    return PcaResult(features, components, mean, ratios)
