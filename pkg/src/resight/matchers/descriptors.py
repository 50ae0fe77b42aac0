"""Multiscale Gaussian-derivative descriptors at fiducial points.

Each fiducial yields, per scale sigma in DESCRIPTOR_SCALES, the six
derivative responses of order 0..2 (L, Lx, Ly, Lxx, Lxy, Lyy) computed
by correlating the image window with sampled separable Gaussian
derivative kernels. Each per-scale block of six responses is normalized
to unit L2 norm, which absorbs local contrast; a zero block (flat
window) stays zero. Odd-order kernels are antisymmetric and therefore
annihilate constants exactly; the second-derivative kernel gets an
explicit DC correction so truncation cannot leak a constant response.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from resight.constants import DESCRIPTOR_SCALES, KERNEL_TRUNCATE
from resight.imageio import to_float

logger = logging.getLogger(__name__)

# (x-order, y-order) per response, fixed layout within a scale block
DERIVATIVE_ORDERS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


@dataclass
class FeatureSet:
    """Per-fiducial descriptor vectors for one image.

    positions: (n, 2) float array of (x, y) for the fiducials kept.
    descriptors: (n, 6 * n_scales) float64 matrix.
    index: original fiducial indices retained (border-skips removed).
    """

    positions: np.ndarray
    descriptors: np.ndarray
    index: list[int]
    scales: tuple[float, ...] = DESCRIPTOR_SCALES

    def __len__(self) -> int:
        return len(self.index)

    def subset(self, keep) -> "FeatureSet":
        keep = list(keep)
        rows = [self.index.index(i) for i in keep]
        return FeatureSet(
            positions=self.positions[rows],
            descriptors=self.descriptors[rows],
            index=keep,
            scales=self.scales,
        )


@lru_cache(maxsize=None)
def gaussian_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sampled 1-D Gaussian and its first two derivatives at ``sigma``.

    The smoothing kernel is normalized to unit sum. The second
    derivative has its mean subtracted so that all orders >= 1 respond
    exactly zero to a constant signal despite truncation.
    """
    radius = kernel_radius(sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    # sign flipped so that CORRELATION with g1 equals convolution with the
    # true first derivative (positive response on a rising edge)
    g1 = x / sigma**2 * g
    g2 = (x**2 - sigma**2) / sigma**4 * g
    g2 -= g2.mean()
    return g, g1, g2


def kernel_radius(sigma: float) -> int:
    return int(math.ceil(KERNEL_TRUNCATE * sigma))


def point_response(image: np.ndarray, x: int, y: int, sigma: float, order_x: int, order_y: int) -> float:
    """Correlation of the (order_x, order_y) kernel with the window at (x, y).

    Correlation convention: response = sum_{dy,dx} k_y(dy) k_x(dx) I[y+dy, x+dx].
    The window must fit inside the image.
    """
    kernels = gaussian_kernels(sigma)
    kx, ky = kernels[order_x], kernels[order_y]
    r = kernel_radius(sigma)
    window = image[y - r : y + r + 1, x - r : x + r + 1]
    if window.shape != (2 * r + 1, 2 * r + 1):
        raise ValueError(f"window at ({x}, {y}) does not fit inside the image")
    return float(ky @ window @ kx)


def extract_features(image, fiducials, scales=DESCRIPTOR_SCALES) -> FeatureSet:
    """Descriptor matrix for the given fiducials.

    Deterministic (pure arithmetic, fixed kernel layout). Fiducials whose
    largest-scale window does not fit inside the image are skipped with a
    warning; raises ValueError if none remain.
    """
    grid = to_float(image)
    fiducials = list(fiducials)
    if not fiducials:
        raise ValueError("need at least one fiducial")
    h, w = grid.shape
    r_max = kernel_radius(max(scales))
    kept_positions, kept_index, rows = [], [], []
    for i, (fx, fy) in enumerate(fiducials):
        x, y = int(round(fx)), int(round(fy))
        if not (0 <= fx < w and 0 <= fy < h):
            raise ValueError(f"fiducial {i} at ({fx}, {fy}) outside image bounds")
        if x - r_max < 0 or x + r_max >= w or y - r_max < 0 or y + r_max >= h:
            logger.warning("fiducial %d at (%d, %d) too close to border, skipped", i, x, y)
            continue
        blocks = []
        for sigma in scales:
            block = np.array(
                [point_response(grid, x, y, sigma, ox, oy) for ox, oy in DERIVATIVE_ORDERS]
            )
            norm = np.linalg.norm(block)
            if norm > 0.0:
                block = block / norm
            blocks.append(block)
        rows.append(np.concatenate(blocks))
        kept_positions.append((fx, fy))
        kept_index.append(i)
    if not rows:
        raise ValueError("no fiducial usable: all too close to the border")
    return FeatureSet(
        positions=np.asarray(kept_positions, dtype=np.float64),
        descriptors=np.vstack(rows),
        index=kept_index,
        scales=tuple(scales),
    )


def descriptor_cosine(features_a: FeatureSet, features_b: FeatureSet) -> float:
    """Mean cosine similarity over fiducials present in both sets, in [-1, 1].

    Fiducials correspond by original index. Zero-norm descriptors
    contribute cosine 0. Symmetric in its arguments.
    """
    common = [i for i in features_a.index if i in features_b.index]
    if not common:
        raise ValueError("feature sets share no fiducials")
    a = features_a.subset(common).descriptors
    b = features_b.subset(common).descriptors
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    dots = np.einsum("ij,ij->i", a, b)
    cos = np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)
    return float(np.mean(cos))
