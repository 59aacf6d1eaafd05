from __future__ import annotations

from typing import NamedTuple

import numpy as np


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


def _as_bool(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return mask
    return mask > (127 if mask.dtype == np.uint8 and mask.max(initial=0) > 1 else 0)


def confusion(pred, gt) -> ConfusionCounts:
    pred, gt = _as_bool(pred), _as_bool(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def iou_from_counts(c: ConfusionCounts) -> tuple[float, float]:
    """(foreground IoU, background IoU); an empty union counts as perfect agreement."""
    fg_union = c.tp + c.fp + c.fn
    bg_union = c.tn + c.fp + c.fn
    return (c.tp / fg_union if fg_union else 1.0, c.tn / bg_union if bg_union else 1.0)


def miou(pred, gt) -> float:
    """Two-class (foreground, background) mean IoU in percent."""
    fg, bg = iou_from_counts(confusion(pred, gt))
    return 100.0 * (fg + bg) / 2.0


def f1(pred, gt) -> float:
    """Foreground F1 (Dice) in percent; 100 when both masks are empty."""
    c = confusion(pred, gt)
    denom = 2 * c.tp + c.fp + c.fn
    return 100.0 * (2 * c.tp / denom if denom else 1.0)
