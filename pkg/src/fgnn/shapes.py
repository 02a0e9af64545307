"""Synthetic single-channel segmentation images: rectangles and discs on noise."""

from __future__ import annotations

import numpy as np


def synthetic_shapes(n: int, size: int = 32, seed: int = 0, max_shapes: int = 3,
                     noise: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(images, masks)``, both (n, 1, size, size) float64.

    Each image holds 1..max_shapes filled rectangles or discs of random
    brightness over Gaussian noise; the mask marks the shape pixels.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.indices((size, size))
    images = np.empty((n, 1, size, size))
    masks = np.zeros((n, 1, size, size))
    for i in range(n):
        m = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, max_shapes + 1)):
            if rng.random() < 0.5:
                h, w = rng.integers(size // 8, size // 2, size=2)
                r0, c0 = rng.integers(0, size - h), rng.integers(0, size - w)
                m[r0:r0 + h, c0:c0 + w] = True
            else:
                rad = rng.uniform(size / 10, size / 4)
                cr, cc = rng.uniform(rad, size - rad, size=2)
                m |= (rows - cr) ** 2 + (cols - cc) ** 2 <= rad ** 2
        masks[i, 0] = m
        images[i, 0] = rng.normal(0.0, noise, (size, size)) + m * rng.uniform(0.8, 1.2)
    return images, masks
