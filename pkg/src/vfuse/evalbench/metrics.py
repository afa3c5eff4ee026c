"""Depth-map and point-cloud error metrics.

Functions whose input set is empty return ``None`` (not applicable) rather
than a misleading zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud

TABLE_THRESHOLDS = (0.125, 0.25, 0.5, 1.0)


def _eval_mask(depth, gt, mask):
    m = np.isfinite(depth) & np.isfinite(gt)
    return m if mask is None else (m & mask)


def mae(depth: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float | None:
    m = _eval_mask(depth, gt, mask)
    if not m.any():
        return None
    return float(np.mean(np.abs(depth[m] - gt[m])))


def inlier_pct(
    depth: np.ndarray,
    gt: np.ndarray,
    mask: np.ndarray | None = None,
    thresholds: Sequence[float] = TABLE_THRESHOLDS,
) -> list[float] | None:
    """Percentage of pixels with absolute error strictly below each threshold."""
    m = _eval_mask(depth, gt, mask)
    if not m.any():
        return None
    err = np.abs(depth[m] - gt[m])
    return [float(100.0 * np.mean(err < t)) for t in thresholds]


@dataclass
class Sparsification:
    density: np.ndarray
    mae: np.ndarray
    area: float


def auc_sparsification(
    depth: np.ndarray,
    conf: np.ndarray,
    gt: np.ndarray,
    mask: np.ndarray | None = None,
    steps: int = 20,
) -> Sparsification | None:
    """MAE of the most confident fraction of pixels, for densities ``k/steps``.

    Pixels are ranked by confidence, highest first. When a density cut falls
    inside a group of equal confidences the group contributes its mean error
    for the part that is kept, so the curve does not depend on how ties are
    ordered. The area integrates the curve over density in [0, 1], holding it
    at its first value below ``1/steps``.
    """
    if steps < 2:
        raise ValueError("need at least 2 sparsification steps")
    m = _eval_mask(depth, gt, mask)
    if not m.any():
        return None
    err = np.abs(depth[m] - gt[m])
    c = np.nan_to_num(conf[m], nan=-np.inf)
    order = np.argsort(-c, kind="stable")
    err, c = err[order], c[order]
    n = err.size

    starts = np.flatnonzero(np.r_[True, c[1:] != c[:-1]])
    ends = np.r_[starts[1:], n]
    cum = np.r_[0.0, np.cumsum(err)]
    group_mean = (cum[ends] - cum[starts]) / (ends - starts)

    density = np.arange(1, steps + 1) / steps
    keep = np.maximum(1, np.ceil(density * n - 1e-9).astype(np.int64))
    g = np.searchsorted(starts, keep - 1, side="right") - 1
    partial = keep - starts[g]
    curve = (cum[starts[g]] + partial * group_mean[g]) / keep
    area = float(density[0] * curve[0] + np.sum(np.diff(density) * (curve[1:] + curve[:-1]) / 2))
    return Sparsification(density, curve, area)


def nearest_distances(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each query point to its nearest reference point."""
    dist, _ = cKDTree(ref).query(query, k=1)
    return dist


def nearest_distances_bruteforce(query: np.ndarray, ref: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty(len(query))
    for s in range(0, len(query), chunk):
        q = query[s : s + chunk]
        d2 = np.sum(q * q, axis=1)[:, None] - 2 * q @ ref.T + np.sum(ref * ref, axis=1)[None]
        out[s : s + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


@dataclass
class ChamferResult:
    accuracy: float
    completeness: float
    overall: float


def chamfer(est: PointCloud, gt: PointCloud) -> ChamferResult | None:
    """Mean nearest-neighbour distance est->gt (accuracy), gt->est (completeness), and their mean."""
    if len(est) == 0 or len(gt) == 0:
        return None
    acc = float(np.mean(nearest_distances(est.points, gt.points)))
    comp = float(np.mean(nearest_distances(gt.points, est.points)))
    return ChamferResult(acc, comp, 0.5 * (acc + comp))


def pct_within(est: PointCloud, gt: PointCloud, tau: float) -> tuple[float, float, float] | None:
    """Percent of est points within ``tau`` of gt, of gt points within ``tau`` of est, and their mean."""
    if len(est) == 0 or len(gt) == 0:
        return None
    acc = 100.0 * float(np.mean(nearest_distances(est.points, gt.points) < tau))
    comp = 100.0 * float(np.mean(nearest_distances(gt.points, est.points) < tau))
    return acc, comp, 0.5 * (acc + comp)
