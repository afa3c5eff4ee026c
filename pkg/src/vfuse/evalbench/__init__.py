"""Synthetic scenes, depth metrics, and point-cloud evaluation."""

from .cloud import FilterParams, PointCloud, depth_to_cloud
from .metrics import auc_sparsification, chamfer, inlier_pct, mae, pct_within
from .scenes import Scene, SyntheticSceneSpec, generate_scene

__all__ = [
    "FilterParams",
    "PointCloud",
    "Scene",
    "SyntheticSceneSpec",
    "auc_sparsification",
    "chamfer",
    "depth_to_cloud",
    "generate_scene",
    "inlier_pct",
    "mae",
    "pct_within",
]
