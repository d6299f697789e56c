"""Sparse incremental structure from motion."""

from .bundle import bundle_adjust
from .features import detect_features, match_features
from .model import BAOptions, Feature, SparseModel, Track
from .pnp import pnp, pnp_known_rotation, pnp_ransac
from .reconstruct import ReconstructOptions, reconstruct
from .twoview import estimate_essential, recover_pose, triangulate

__all__ = [
    "BAOptions", "Feature", "ReconstructOptions", "SparseModel", "Track", "bundle_adjust", "detect_features",
    "estimate_essential", "match_features", "pnp", "pnp_known_rotation", "pnp_ransac", "reconstruct",
    "recover_pose", "triangulate",
]
