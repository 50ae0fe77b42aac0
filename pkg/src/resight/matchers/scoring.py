"""Classical pairwise scores over prepared image artifacts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from resight.constants import DEFORMATION_ALPHA, DEFORMATION_BETA, PATCH_HALF_WIDTH
from resight.imageio import to_float
from resight.matchers.align import diffeo_align, divergence, warp
from resight.matchers.brightness import Patch, extract_patch, nbe
from resight.matchers.descriptors import FeatureSet, descriptor_cosine, extract_features
from resight.matchers.ransac import ransac_match

CLASSICAL_METHODS = ("descriptor_cosine", "ransac", "deformation")


class WorkflowOrderError(RuntimeError):
    """An operation ran before its workflow prerequisites (missing artifacts)."""


@dataclass
class MatchScore:
    query_id: str
    candidate_id: str
    method_id: str
    raw: float
    normalized: float | None = None


@dataclass
class ImageArtifacts:
    """Everything the matchers need about one image, extracted once."""

    image_id: str
    pixels: np.ndarray
    fiducials: list
    features: FeatureSet | None = None
    body_patch: Patch | None = None


def prepare_artifacts(image_id: str, pixels, fiducials, half_width: int = PATCH_HALF_WIDTH) -> ImageArtifacts:
    """Extract descriptors and the body patch (anchored at the fiducial
    centroid) for one image."""
    grid = to_float(pixels)
    features = extract_features(grid, fiducials)
    center = np.mean(np.asarray(fiducials, dtype=np.float64), axis=0)
    patch = extract_patch(grid, center, anchor=-1, half_width=half_width)
    return ImageArtifacts(
        image_id=image_id, pixels=grid, fiducials=list(fiducials), features=features, body_patch=patch
    )


def deformation_features(patch_a: Patch, patch_b: Patch, **align_params):
    """Align the two patches; return (div_map, err_map, div_score, residual)."""
    field = diffeo_align(patch_a, patch_b, **align_params)
    div_map, div_score = divergence(field)
    _, err_map = nbe(warp(patch_a, field.u, field.v), patch_b)
    return div_map, err_map, div_score, field.residual


def deformation_score(div_score: float, residual: float) -> float:
    """exp(-alpha * divergence - beta * residual), in (0, 1]."""
    return math.exp(-DEFORMATION_ALPHA * div_score - DEFORMATION_BETA * residual)


def pair_deformation_maps(a: ImageArtifacts, b: ImageArtifacts, **align_params):
    if a.body_patch is None or b.body_patch is None:
        raise WorkflowOrderError("body patches missing: image not featured yet")
    return deformation_features(a.body_patch, b.body_patch, **align_params)


def pair_score_classical(a: ImageArtifacts, b: ImageArtifacts, method: str, seed: int = 0) -> MatchScore:
    """Raw similarity of one pair under one method, mapped into [0, 1].

    descriptor_cosine: mean fiducial descriptor cosine, remapped from
    [-1, 1]. ransac: inlier fraction from geometric verification.
    deformation: exp-combined divergence and post-alignment residual.
    """
    if method not in CLASSICAL_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {CLASSICAL_METHODS}")
    if a.features is None or b.features is None:
        raise WorkflowOrderError(
            f"features missing for {a.image_id if a.features is None else b.image_id}: "
            "image not featured yet"
        )
    if method == "descriptor_cosine":
        raw = (descriptor_cosine(a.features, b.features) + 1.0) / 2.0
    elif method == "ransac":
        raw = ransac_match(a.features, b.features, seed=seed).score
    else:
        _, _, div_score, residual = pair_deformation_maps(a, b)
        raw = deformation_score(div_score, residual)
    return MatchScore(query_id=a.image_id, candidate_id=b.image_id, method_id=method, raw=float(raw))
