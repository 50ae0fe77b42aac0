"""Nonrigid patch alignment and displacement-field divergence.

The aligner estimates a dense displacement field (u, v) such that
sampling patch_a at (x + u, y + v) reproduces patch_b, by coarse-to-fine
demons-style iteration: at each pyramid level the brightness residual
drives a displacement increment, the increment is smoothed (Tikhonov-like
regularization via Gaussian filtering) and clipped below half a pixel,
and the running field is updated by composition. The half-pixel clip on
every composed increment is the invertibility guard that keeps the
accumulated warp diffeomorphic; the pyramid realizes the scale cascade.

The scalar summary used for matching is the mean absolute divergence of
the field (how much the warp locally expands or contracts, evidence
against the two patches showing the same individual) plus the residual
normalized brightness error after alignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from resight.constants import (
    ALIGN_ITERS,
    ALIGN_LEVELS,
    ALIGN_MIN_LEVEL_SIZE,
    ALIGN_SMOOTHNESS,
    ALIGN_STEP_CLIP,
)
from resight.matchers.brightness import Patch, nbe, standardize

_EPS = 1e-9


@dataclass
class DeformationField:
    """Dense displacement grids plus the post-alignment brightness residual."""

    u: np.ndarray
    v: np.ndarray
    residual: float
    converged: bool = True

    @property
    def shape(self):
        return self.u.shape


def _as_grid(patch) -> np.ndarray:
    return patch.pixels if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)


def warp(image, u, v) -> np.ndarray:
    """Sample ``image`` at (x + u, y + v) with bilinear interpolation."""
    grid = _as_grid(image)
    h, w = grid.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(grid, [yy + v, xx + u], order=1, mode="nearest")


def _compose(u, v, du, dv):
    # phi <- phi o (id + d): new displacement is d plus the old field
    # sampled where d lands.
    h, w = u.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u_new = ndimage.map_coordinates(u, [yy + dv, xx + du], order=1, mode="nearest") + du
    v_new = ndimage.map_coordinates(v, [yy + dv, xx + du], order=1, mode="nearest") + dv
    return u_new, v_new


def _downsample(grid):
    return ndimage.gaussian_filter(grid, 1.0)[::2, ::2]


def _resize_field(grid, shape):
    zoom = (shape[0] / grid.shape[0], shape[1] / grid.shape[1])
    return ndimage.zoom(grid, zoom, order=1, mode="nearest", grid_mode=True)


def _increment(moving, fixed, u, v, smoothness):
    """Demons update: residual-driven displacement, smoothed and clipped."""
    warped = warp(moving, u, v)
    diff = warped - fixed
    gy, gx = np.gradient(warped)
    denom = gx**2 + gy**2 + diff**2 + _EPS
    du = ndimage.gaussian_filter(-diff * gx / denom, smoothness)
    dv = ndimage.gaussian_filter(-diff * gy / denom, smoothness)
    mag = np.hypot(du, dv)
    over = mag > ALIGN_STEP_CLIP
    if over.any():
        scale = np.where(over, ALIGN_STEP_CLIP / np.where(mag > 0, mag, 1.0), 1.0)
        du, dv = du * scale, dv * scale
    return du, dv


def diffeo_align(
    patch_a,
    patch_b,
    levels: int = ALIGN_LEVELS,
    iters: int = ALIGN_ITERS,
    smoothness: float = ALIGN_SMOOTHNESS,
) -> DeformationField:
    """Estimate the field aligning patch_a onto patch_b.

    Guarantees residual <= nbe(patch_a, patch_b): the best field seen
    (including the zero field) is returned, so alignment can never make
    the pair look worse. ``converged`` is False when no iterate improved
    on the unaligned residual.
    """
    a = _as_grid(patch_a)
    b = _as_grid(patch_b)
    if a.shape != b.shape:
        raise ValueError(f"patch dimensions differ: {a.shape} vs {b.shape}")
    if levels < 1 or iters < 1 or smoothness <= 0:
        raise ValueError("levels, iters, and smoothness must be positive")

    a_std, b_std = standardize(a), standardize(b)
    pyramid = [(a_std, b_std)]
    while len(pyramid) < levels and min(pyramid[-1][0].shape) >= 2 * ALIGN_MIN_LEVEL_SIZE:
        prev_a, prev_b = pyramid[-1]
        pyramid.append((_downsample(prev_a), _downsample(prev_b)))
    pyramid.reverse()  # coarse to fine

    base_residual = nbe(a, b)[0]
    best = (np.zeros_like(a), np.zeros_like(a), base_residual)

    u = np.zeros(pyramid[0][0].shape)
    v = np.zeros_like(u)
    for level_a, level_b in pyramid:
        if u.shape != level_a.shape:
            sy = level_a.shape[0] / u.shape[0]
            sx = level_a.shape[1] / u.shape[1]
            u = _resize_field(u, level_a.shape) * sx
            v = _resize_field(v, level_a.shape) * sy
        finest = level_a.shape == a.shape
        for _ in range(iters):
            du, dv = _increment(level_a, level_b, u, v, smoothness)
            u, v = _compose(u, v, du, dv)
            if finest:
                residual = nbe(warp(a, u, v), b)[0]
                if residual < best[2]:
                    best = (u.copy(), v.copy(), residual)

    u_best, v_best, residual = best
    return DeformationField(
        u=u_best, v=v_best, residual=residual, converged=residual < base_residual - 1e-12
    )


def divergence(field_or_u, v=None) -> tuple[np.ndarray, float]:
    """Divergence map du/dx + dv/dy and its mean-absolute interior score.

    Central differences inside, one-sided at the borders; the score
    averages |divergence| over the interior (full map when thinner than
    3 px). Raises on degenerate single-pixel fields.
    """
    if v is None:
        u_grid, v_grid = field_or_u.u, field_or_u.v
    else:
        u_grid, v_grid = np.asarray(field_or_u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if u_grid.shape != v_grid.shape:
        raise ValueError("u and v grids must have equal shape")
    if min(u_grid.shape) < 2:
        raise ValueError(f"degenerate field of shape {u_grid.shape}")
    div_map = np.gradient(u_grid, axis=1) + np.gradient(v_grid, axis=0)
    interior = div_map[1:-1, 1:-1] if min(div_map.shape) >= 3 else div_map
    return div_map, float(np.mean(np.abs(interior)))
