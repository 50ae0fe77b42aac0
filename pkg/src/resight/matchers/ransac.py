"""Iterated correspondence and RANSAC affine fitting between feature sets.

Alternates (a) one-to-one nearest-descriptor matching, gated by the
current transform estimate, with (b) a RANSAC affine re-fit on the
matched pairs, until the inlier set stops changing or a fixed number of
outer rounds. All sampling comes from one seeded generator, so results
are bit-stable per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from resight import rng
from resight.constants import (
    RANSAC_GATE_FACTOR,
    RANSAC_INLIER_TOL_PX,
    RANSAC_ITERS,
    RANSAC_MAX_SCALE,
    RANSAC_MIN_INLIERS,
    RANSAC_OUTER_ROUNDS,
)
from resight.matchers.descriptors import FeatureSet


@dataclass
class RansacResult:
    affine: np.ndarray | None     # 2x3, maps homogeneous (x, y, 1) of a into b
    inlier_count: int
    score: float                  # inlier_count / min(n_a, n_b)
    inlier_pairs: list = field(default_factory=list)


def _fit_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Least-squares 2x3 affine from src (n,2) to dst (n,2); None if rank-deficient."""
    n = src.shape[0]
    design = np.hstack([src, np.ones((n, 1))])
    if np.linalg.matrix_rank(design) < 3:
        return None
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return sol.T  # (2, 3)


def _plausible(affine: np.ndarray) -> bool:
    # Random minimal samples produce wildly scaled/sheared fits; body poses
    # between sightings cannot. Bounding the singular values rejects those
    # spurious transforms without constraining realistic ones.
    sv = np.linalg.svd(affine[:, :2], compute_uv=False)
    return bool(sv.max() <= RANSAC_MAX_SCALE and sv.min() >= 1.0 / RANSAC_MAX_SCALE)


def _apply_affine(affine: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ affine[:, :2].T + affine[:, 2]


def _match_one_to_one(features_a: FeatureSet, features_b: FeatureSet, affine, gate_px):
    """Greedy unique descriptor matches, optionally gated by the transform."""
    da, db = features_a.descriptors, features_b.descriptors
    dists = np.linalg.norm(da[:, None, :] - db[None, :, :], axis=2)
    if affine is not None:
        projected = _apply_affine(affine, features_a.positions)
        gaps = np.linalg.norm(projected[:, None, :] - features_b.positions[None, :, :], axis=2)
        dists = np.where(gaps <= gate_px, dists, np.inf)
    order = np.dstack(np.unravel_index(np.argsort(dists, axis=None), dists.shape))[0]
    used_a, used_b, pairs = set(), set(), []
    for i, j in order:
        if dists[i, j] == np.inf:
            break
        if i in used_a or j in used_b:
            continue
        used_a.add(int(i))
        used_b.add(int(j))
        pairs.append((int(i), int(j)))
    return sorted(pairs)


def ransac_match(
    features_a: FeatureSet,
    features_b: FeatureSet,
    iters: int = RANSAC_ITERS,
    inlier_tol_px: float = RANSAC_INLIER_TOL_PX,
    min_inliers: int = RANSAC_MIN_INLIERS,
    seed: int = 0,
) -> RansacResult:
    """Geometric verification score for two featured images.

    Returns score = inlier_count / min(n_a, n_b) in [0, 1]; fewer than
    three usable correspondences yields score 0 with no transform.
    """
    n_a, n_b = len(features_a), len(features_b)
    if min(n_a, n_b) < 3:
        return RansacResult(affine=None, inlier_count=0, score=0.0)
    gen = rng.generator("ransac", seed)
    gate_px = RANSAC_GATE_FACTOR * inlier_tol_px

    affine = None
    prev_inliers: list | None = None
    best = RansacResult(affine=None, inlier_count=0, score=0.0)
    for _ in range(RANSAC_OUTER_ROUNDS):
        pairs = _match_one_to_one(features_a, features_b, affine, gate_px)
        if len(pairs) < 3:
            break
        src = features_a.positions[[i for i, _ in pairs]]
        dst = features_b.positions[[j for _, j in pairs]]
        round_best_inliers: np.ndarray | None = None
        for _ in range(iters):
            sample = gen.choice(len(pairs), size=3, replace=False)
            candidate = _fit_affine(src[sample], dst[sample])
            if candidate is None or not _plausible(candidate):
                continue
            errors = np.linalg.norm(_apply_affine(candidate, src) - dst, axis=1)
            inliers = errors < inlier_tol_px
            if round_best_inliers is None or inliers.sum() > round_best_inliers.sum():
                round_best_inliers = inliers
        if round_best_inliers is None or round_best_inliers.sum() < min_inliers:
            break
        refit = _fit_affine(src[round_best_inliers], dst[round_best_inliers])
        if refit is None or not _plausible(refit):
            break
        errors = np.linalg.norm(_apply_affine(refit, src) - dst, axis=1)
        inliers = errors < inlier_tol_px
        inlier_pairs = [pairs[k] for k in np.flatnonzero(inliers)]
        affine = refit
        count = int(inliers.sum())
        if count >= best.inlier_count:
            best = RansacResult(
                affine=refit,
                inlier_count=count,
                score=min(1.0, count / min(n_a, n_b)),
                inlier_pairs=inlier_pairs,
            )
        if prev_inliers == inlier_pairs:
            break
        prev_inliers = inlier_pairs
    return best
