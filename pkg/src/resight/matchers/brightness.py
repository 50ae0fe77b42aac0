"""Patch extraction and normalized brightness error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from resight.constants import PATCH_HALF_WIDTH
from resight.imageio import to_float


@dataclass
class Patch:
    """Square intensity window around a fiducial.

    pixels: (H, W) float64 in [0, 1], H and W >= 8.
    anchor: index of the fiducial it was extracted at (-1 for synthetic
    anchors such as the fiducial centroid).
    scale: extraction half-width in px.
    """

    pixels: np.ndarray
    anchor: int
    scale: int

    def __post_init__(self):
        h, w = self.pixels.shape
        if h < 8 or w < 8:
            raise ValueError(f"patch too small: {h}x{w} (need >= 8)")
        if not np.isfinite(self.pixels).all():
            raise ValueError("patch intensities must be finite")


def extract_patch(image, center, anchor: int = -1, half_width: int = PATCH_HALF_WIDTH) -> Patch:
    """Patch of size (2h+1)^2 at ``center`` = (x, y).

    The window is shifted inward when the center sits closer than
    ``half_width`` to a border, so the output size is always constant.
    """
    grid = to_float(image)
    h, w = grid.shape
    size = 2 * half_width + 1
    if size > h or size > w:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")
    cx, cy = int(round(center[0])), int(round(center[1]))
    x0 = min(max(cx - half_width, 0), w - size)
    y0 = min(max(cy - half_width, 0), h - size)
    return Patch(pixels=grid[y0 : y0 + size, x0 : x0 + size].copy(), anchor=anchor, scale=half_width)


def standardize(pixels: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance normalization; a flat grid maps to zeros.

    The flatness test uses a small absolute epsilon: a numerically
    constant grid can leave std ~1e-16 through the mean round-trip.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    std = arr.std()
    if std < 1e-12:
        return np.zeros_like(arr)
    return (arr - arr.mean()) / std


def nbe(patch_a, patch_b) -> tuple[float, np.ndarray]:
    """Normalized brightness error between two equal-size patches.

    Both patches are standardized (zero mean, unit variance); the scalar
    is the mean squared difference of the standardized grids, in [0, 4],
    and the map is the per-pixel absolute difference. Symmetric, and
    invariant to affine photometric changes of either argument.
    """
    a = patch_a.pixels if isinstance(patch_a, Patch) else np.asarray(patch_a, dtype=np.float64)
    b = patch_b.pixels if isinstance(patch_b, Patch) else np.asarray(patch_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"patch dimensions differ: {a.shape} vs {b.shape}")
    diff = standardize(a) - standardize(b)
    return float(np.mean(diff**2)), np.abs(diff)
