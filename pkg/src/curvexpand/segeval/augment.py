"""Paired geometric/erasing augmentations used as expansion baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Augmentation:
    method: str
    hflip: bool = False
    vflip: bool = False
    rot90: int = 0
    box: tuple[int, int, int, int] | None = None  # y0, x0, y1, x1 for cutout

    def apply_image(self, image: np.ndarray) -> np.ndarray:
        if self.method == "cutout":
            out = image.copy()
            y0, x0, y1, x1 = self.box
            out[y0:y1, x0:x1] = 0
            return out
        return self._geometric(image)

    def apply_mask(self, mask: np.ndarray) -> np.ndarray:
        if self.method == "cutout":
            out = mask.copy()
            y0, x0, y1, x1 = self.box
            out[y0:y1, x0:x1] = 0
            return out
        return self._geometric(mask)

    def _geometric(self, a: np.ndarray) -> np.ndarray:
        if self.hflip:
            a = a[:, ::-1]
        if self.vflip:
            a = a[::-1, :]
        return np.ascontiguousarray(np.rot90(a, self.rot90))


def sample_augmentation(method: str, shape: tuple[int, int], rng: np.random.Generator, cutout_frac: float = 0.25) -> Augmentation:
    if method == "flip_rotate":
        return Augmentation(method, bool(rng.integers(2)), bool(rng.integers(2)), int(rng.integers(4)))
    if method == "cutout":
        h, w = shape
        ph, pw = max(1, int(h * cutout_frac)), max(1, int(w * cutout_frac))
        y0, x0 = int(rng.integers(0, h - ph + 1)), int(rng.integers(0, w - pw + 1))
        return Augmentation(method, box=(y0, x0, y0 + ph, x0 + pw))
    raise ValueError(f"unknown augmentation {method!r}")


def baseline_augment(image: np.ndarray, mask: np.ndarray, method: str, rng: np.random.Generator):
    """Apply one randomly drawn transform identically to an image and its mask."""
    aug = sample_augmentation(method, mask.shape[:2], rng)
    return aug.apply_image(image), aug.apply_mask(mask)


def expand_with_augmentation(images, masks, ratio: int, method: str, seed: int):
    """Original samples plus (ratio - 1) augmented copies of each."""
    rng = np.random.default_rng(seed)
    out_x, out_y = [images], [masks]
    for _ in range(ratio - 1):
        pairs = [baseline_augment(x, y, method, rng) for x, y in zip(images, masks)]
        out_x.append(np.stack([p[0] for p in pairs]))
        out_y.append(np.stack([p[1] for p in pairs]))
    return np.concatenate(out_x), np.concatenate(out_y)
