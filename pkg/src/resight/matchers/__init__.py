"""Pairwise image similarity methods.

Cheap invariant route: multiscale Gaussian-derivative descriptors at
fiducials compared by cosine, optionally RANSAC-verified geometrically.
Expensive selective route: nonrigid alignment of body patches, scored by
the divergence of the recovered displacement field plus the residual
normalized brightness error, either as a closed-form score or through a
small trained CNN over the (divergence, brightness-error) map pair.
"""

from resight.matchers.align import DeformationField, diffeo_align, divergence, warp
from resight.matchers.brightness import Patch, extract_patch, nbe, standardize
from resight.matchers.cnn import PrimedCnnModel, primed_cnn_forward, primed_cnn_train
from resight.matchers.descriptors import FeatureSet, descriptor_cosine, extract_features
from resight.matchers.ransac import RansacResult, ransac_match
from resight.matchers.scoring import (
    CLASSICAL_METHODS,
    ImageArtifacts,
    MatchScore,
    WorkflowOrderError,
    pair_deformation_maps,
    pair_score_classical,
    prepare_artifacts,
)

__all__ = [
    "CLASSICAL_METHODS",
    "DeformationField",
    "FeatureSet",
    "ImageArtifacts",
    "MatchScore",
    "Patch",
    "PrimedCnnModel",
    "RansacResult",
    "WorkflowOrderError",
    "descriptor_cosine",
    "diffeo_align",
    "divergence",
    "extract_features",
    "extract_patch",
    "nbe",
    "pair_deformation_maps",
    "pair_score_classical",
    "prepare_artifacts",
    "primed_cnn_forward",
    "primed_cnn_train",
    "standardize",
    "warp",
]
