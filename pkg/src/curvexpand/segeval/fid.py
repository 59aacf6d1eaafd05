"""Frechet distance between Gaussian fits of fixed random-projection features."""

from __future__ import annotations

import warnings

import numpy as np
import torch
import torch.nn.functional as F


class DiagonalCovarianceFallback(UserWarning):
    """Fewer samples than feature dimensions; covariances reduced to their diagonals."""


def project_features(images: np.ndarray, seed: int = 0, projector: str = "random") -> np.ndarray:
    """Features for float images (N, H, W) in [0, 1].

    ``random``: two seeded stride-2 conv layers with ReLU, then global mean and
    std pooling (32 dims). ``identity``: 4x4 average pooling of the pixels.
    """
    x = torch.as_tensor(np.asarray(images, dtype=np.float32))[:, None]
    if projector == "identity":
        return F.adaptive_avg_pool2d(x, 4).flatten(1).double().numpy()
    if projector != "random":
        raise ValueError(f"unknown projector {projector!r}")
    gen = torch.Generator().manual_seed(seed)
    w1 = torch.randn(16, 1, 3, 3, generator=gen) / 3.0
    w2 = torch.randn(16, 16, 3, 3, generator=gen) / 12.0
    with torch.no_grad():
        h = F.relu(F.conv2d(x, w1, stride=2, padding=1))
        h = F.relu(F.conv2d(h, w2, stride=2, padding=1))
    return torch.cat([h.mean((2, 3)), h.std((2, 3))], 1).double().numpy()


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(feat_a: np.ndarray, feat_b: np.ndarray) -> tuple[float, bool]:
    """(distance, used_diagonal_fallback)."""
    mu_a, mu_b = feat_a.mean(0), feat_b.mean(0)
    dim = feat_a.shape[1]
    diff = float(((mu_a - mu_b) ** 2).sum())
    if min(len(feat_a), len(feat_b)) <= dim:
        sd_a, sd_b = feat_a.std(0, ddof=1) if len(feat_a) > 1 else 0.0, feat_b.std(0, ddof=1) if len(feat_b) > 1 else 0.0
        return max(0.0, diff + float(((sd_a - sd_b) ** 2).sum())), True
    cov_a = np.cov(feat_a, rowvar=False)
    cov_b = np.cov(feat_b, rowvar=False)
    root_a = _sqrt_psd(cov_a)
    cross = np.linalg.eigvalsh(root_a @ cov_b @ root_a)
    trace_sqrt = float(np.sqrt(np.clip(cross, 0, None)).sum())
    return max(0.0, diff + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * trace_sqrt), False


def feature_distance(real: np.ndarray, synth: np.ndarray, projector_seed: int = 0, projector: str = "random") -> float:
    """Non-negative distance between two image sets (each (N, H, W) in [0, 1])."""
    if len(real) == 0 or len(synth) == 0:
        raise ValueError("both image sets must be non-empty")
    value, diagonal = frechet_distance(
        project_features(real, projector_seed, projector), project_features(synth, projector_seed, projector)
    )
    if diagonal:
        warnings.warn("too few samples for full covariance; using diagonal fallback", DiagonalCovarianceFallback)
    return value
