"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from dmssn.data import HyperCube, ObjectShape, SaliencyMask, SceneSpec


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def central_diff_check(
    closure,
    named_tensors,
    coords_per_tensor: int = 4,
    base_step: float = 1e-6,
    rel_tol: float = 1e-4,
    seed: int = 0,
):
    """Compare autograd gradients against central differences, per tensor.

    ``closure`` must rebuild the scalar loss from scratch on every call;
    ``named_tensors`` are float64 leaves with requires_grad. A deterministic
    sample of coordinates is probed in each tensor. Returns the worst relative
    error seen; raises AssertionError past ``rel_tol``.
    """
    rng = np.random.default_rng(seed)
    loss = closure()
    grads = torch.autograd.grad(loss, [t for _, t in named_tensors], allow_unused=True)
    worst = 0.0
    for (name, tensor), grad in zip(named_tensors, grads):
        flat = tensor.detach().reshape(-1)
        n = flat.numel()
        count = min(coords_per_tensor, n)
        idxs = rng.choice(n, size=count, replace=False)
        grad_flat = (
            grad.reshape(-1) if grad is not None else torch.zeros_like(flat)
        )
        for i in idxs:
            i = int(i)
            orig = float(flat[i])
            h = base_step * max(1.0, abs(orig))
            with torch.no_grad():
                flat[i] = orig + h
                up = float(closure())
                flat[i] = orig - h
                down = float(closure())
                flat[i] = orig
            fd = (up - down) / (2.0 * h)
            an = float(grad_flat[i])
            scale = max(abs(an), abs(fd))
            if scale < 1e-8:
                continue
            rel = abs(an - fd) / scale
            worst = max(worst, rel)
            assert rel < rel_tol, (
                f"gradient mismatch in {name}[{i}]: analytic {an:.10g} vs "
                f"finite-difference {fd:.10g} (rel {rel:.3g})"
            )
    return worst


# ---------------------------------------------------------------------------
# Brute-force metric oracles (plain-python reimplementations)


def brute_binary(y, t, threshold):
    tp = fp = fn = 0
    for yi, ti in zip(np.ravel(y), np.ravel(t)):
        pred = yi >= threshold
        pos = ti >= 0.5
        if pred and pos:
            tp += 1
        elif pred and not pos:
            fp += 1
        elif not pred and pos:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def brute_curves(y, t, n_thresholds):
    ys, ts = np.ravel(y), np.ravel(t)
    n_pos = sum(1 for v in ts if v >= 0.5)
    n_neg = len(ts) - n_pos
    f1s, points = [], [(0.0, 0.0), (1.0, 1.0)]
    for k in range(1, n_thresholds + 1):
        thr = k / (n_thresholds + 1)
        _, _, f1 = brute_binary(ys, ts, thr)
        f1s.append(f1)
        tp = sum(1 for yi, ti in zip(ys, ts) if yi >= thr and ti >= 0.5)
        fp = sum(1 for yi, ti in zip(ys, ts) if yi >= thr and ti < 0.5)
        points.append((fp / n_neg, tp / n_pos))
    points.sort()
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return float(np.mean(f1s)), auc


def brute_distribution(y, t):
    ys, ts = np.ravel(np.asarray(y, dtype=float)), np.ravel(np.asarray(t, dtype=float))
    mae = float(np.mean([abs(a - b) for a, b in zip(ys, ts)]))
    ym, tm = ys.mean(), ts.mean()
    cov = float(np.mean([(a - ym) * (b - tm) for a, b in zip(ys, ts)]))
    cc = cov / (ys.std() * ts.std())
    standardized = (ys - ym) / ys.std()
    nss = float(np.mean([s for s, b in zip(standardized, ts) if b >= 0.5]))
    return mae, cc, nss


# ---------------------------------------------------------------------------
# Scene fixtures


def two_material_curves(bands=8):
    grid = np.linspace(0, 1, bands)
    return np.stack([0.2 + 0.1 * grid, 0.8 - 0.3 * grid])


@pytest.fixture
def simple_spec():
    return SceneSpec(
        height=16,
        width=16,
        bands=8,
        material_curves=two_material_curves(),
        object_shapes=[ObjectShape("rect", (8, 8), (6, 6), 1)],
        background_material=0,
        salient_material=1,
        noise_sigma=0.0,
        illumination_gradient=0.0,
        seed=11,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_cube(rng, h=8, w=8, c=6) -> HyperCube:
    return HyperCube(rng.uniform(0.05, 0.95, size=(h, w, c)).astype(np.float32))


def random_mask(rng, h=8, w=8) -> SaliencyMask:
    return SaliencyMask((rng.random((h, w)) > 0.6).astype(np.float32))
