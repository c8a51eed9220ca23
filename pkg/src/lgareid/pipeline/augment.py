"""Horizontal flip and random erasing for ``(C, H, W)`` arrays."""

from __future__ import annotations

import math

import numpy as np

ERASE_AREA = (0.02, 0.4)
ERASE_ASPECT = (0.3, 3.33)


def hflip(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1].copy()


def erase_rectangle(shape: tuple[int, int], rng: np.random.Generator, attempts: int = 100
                    ) -> tuple[int, int, int, int] | None:
    """``(top, left, height, width)`` of a rectangle whose area fraction and
    aspect ratio fall in the erasing ranges, or ``None`` if none fits."""
    H, W = shape
    for _ in range(attempts):
        area = rng.uniform(*ERASE_AREA) * H * W
        aspect = rng.uniform(*ERASE_ASPECT)
        h = int(round(math.sqrt(area * aspect)))
        w = int(round(math.sqrt(area / aspect)))
        if 0 < h <= H and 0 < w <= W and ERASE_AREA[0] <= h * w / (H * W) <= ERASE_AREA[1]:
            return int(rng.integers(0, H - h + 1)), int(rng.integers(0, W - w + 1)), h, w
    return None


def random_erase(x: np.ndarray, rng: np.random.Generator, value_range: tuple[float, float] | None = None):
    """Fill a random rectangle with uniform noise.

    The noise range defaults to the input's own ``[min, max]`` so erasing
    works on images and on feature maps alike.  Returns the new array and
    the rectangle (``None`` when nothing was erased).
    """
    rect = erase_rectangle(x.shape[-2:], rng)
    if rect is None:
        return x.copy(), None
    lo, hi = value_range if value_range is not None else (float(x.min()), float(x.max()))
    top, left, h, w = rect
    out = x.copy()
    out[..., top:top + h, left:left + w] = rng.uniform(lo, hi, (*x.shape[:-2], h, w))
    return out, rect


def augment(x: np.ndarray, flip_p: float, erase_p: float, rng: np.random.Generator,
            value_range: tuple[float, float] | None = None) -> np.ndarray:
    if not (0.0 <= flip_p <= 1.0 and 0.0 <= erase_p <= 1.0):
        raise ValueError("augmentation probabilities must lie in [0, 1]")
    if rng.random() < flip_p:
        x = hflip(x)
    if rng.random() < erase_p:
        x, _ = random_erase(x, rng, value_range)
    return x
