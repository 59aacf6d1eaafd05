"""Binarization of generated semantic maps and plausibility filtering."""

from __future__ import annotations

from fractions import Fraction
from typing import NamedTuple

import numpy as np
import torch


class OtsuResult(NamedTuple):
    threshold: int
    mask: np.ndarray  # uint8 {0, 255}
    degenerate: bool


class FilterDecision(NamedTuple):
    accepted: bool
    reason: str | None
    fg_fraction: float


def to_uint8(image) -> np.ndarray:
    """Model output in [-1, 1] (tensor or array, optionally (C, H, W)) -> 8-bit grayscale."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image.mean(axis=0)
    return np.round(np.clip((image + 1.0) / 2.0, 0.0, 1.0) * 255.0).astype(np.uint8)


def otsu_threshold(img: np.ndarray) -> OtsuResult:
    """Threshold maximizing between-class variance over the 256-bin histogram.

    Classes are ``<= t`` and ``> t``; ties go to the smallest ``t``. Variances
    are compared exactly as rationals. A constant image gives an all-zero mask
    and ``degenerate=True``. Three-channel input is averaged to gray first.
    """
    img = np.asarray(img)
    if img.ndim == 3:
        img = np.round(img.astype(np.float64).mean(axis=-1)).astype(np.uint8)
    if img.size == 0:
        raise ValueError("empty image")
    hist = np.bincount(img.astype(np.int64).ravel(), minlength=256)[:256]
    n = int(hist.sum())
    total = int(np.dot(np.arange(256), hist))
    w0 = np.cumsum(hist).tolist()
    s0 = np.cumsum(np.arange(256) * hist).tolist()
    best_t, best = None, Fraction(-1)
    for t in range(255):
        w, s = w0[t], s0[t]
        if w == 0 or w == n:
            continue
        # n^2 * between-class variance = (total*w - n*s)^2 / (w (n - w))
        var = Fraction((total * w - n * s) ** 2, w * (n - w))
        if var > best:
            best, best_t = var, t
    if best_t is None:
        return OtsuResult(int(img.flat[0]), np.zeros(img.shape, dtype=np.uint8), True)
    mask = np.where(img > best_t, 255, 0).astype(np.uint8)
    return OtsuResult(best_t, mask, False)


def plausibility_filter(mask: np.ndarray, min_fg_fraction: float = 0.01, max_fg_fraction: float = 0.5) -> FilterDecision:
    """Accept iff the foreground fraction lies in [min, max] (both inclusive)."""
    if not (0.0 < min_fg_fraction < max_fg_fraction < 1.0):
        raise ValueError("need 0 < min_fg_fraction < max_fg_fraction < 1")
    fg = int(np.count_nonzero(mask == 255))
    fraction = fg / mask.size
    if fg == 0:
        return FilterDecision(False, "empty", fraction)
    if fraction < min_fg_fraction:
        return FilterDecision(False, "too-sparse", fraction)
    if fraction > max_fg_fraction:
        return FilterDecision(False, "saturated", fraction)
    return FilterDecision(True, None, fraction)
