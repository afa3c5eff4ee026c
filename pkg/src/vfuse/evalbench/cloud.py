"""Point clouds from depth maps, with confidence and reprojection filtering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..geometry import CameraModel, backproject_map, reprojection_error_map


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3)
    confidence: np.ndarray  # (n,)
    view_id: np.ndarray  # (n,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        self.view_id = np.asarray(self.view_id, dtype=np.int64).reshape(-1)
        if not (len(self.points) == len(self.confidence) == len(self.view_id)):
            raise ValueError("point, confidence and view id arrays differ in length")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64))

    @classmethod
    def concatenate(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.confidence for c in clouds]),
            np.concatenate([c.view_id for c in clouds]),
        )

    def select(self, mask) -> "PointCloud":
        return PointCloud(self.points[mask], self.confidence[mask], self.view_id[mask])

    def write_ply(self, path: str | Path) -> None:
        """ASCII PLY with ``x y z confidence view_id`` per vertex."""
        lines = [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(self)}",
            "property float x",
            "property float y",
            "property float z",
            "property float confidence",
            "property int view_id",
            "end_header",
        ]
        body = [
            f"{x:.9g} {y:.9g} {z:.9g} {c:.6g} {v:d}"
            for (x, y, z), c, v in zip(self.points, self.confidence, self.view_id)
        ]
        Path(path).write_text("\n".join(lines + body) + "\n")

    @classmethod
    def read_ply(cls, path: str | Path) -> "PointCloud":
        text = Path(path).read_text().splitlines()
        if not text or text[0].strip() != "ply":
            raise ValueError(f"{path} is not a PLY file")
        n = None
        end = None
        for i, line in enumerate(text):
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            if line.strip() == "end_header":
                end = i
                break
        if n is None or end is None:
            raise ValueError(f"{path}: malformed PLY header")
        rows = [line.split() for line in text[end + 1 : end + 1 + n]]
        if not rows:
            return cls.empty()
        arr = np.array(rows, dtype=np.float64)
        return cls(arr[:, :3], arr[:, 3], arr[:, 4].astype(np.int64))


@dataclass(frozen=True)
class FilterParams:
    confidence_threshold: float = 0.1
    pixel_threshold: float = 1.0
    min_consistent: int = 1

    def __post_init__(self):
        if self.confidence_threshold < 0 or self.pixel_threshold < 0 or self.min_consistent < 0:
            raise ValueError("filter thresholds must be non-negative")

    def to_dict(self) -> dict:
        return {
            "confidence_threshold": self.confidence_threshold,
            "pixel_threshold": self.pixel_threshold,
            "min_consistent": self.min_consistent,
        }


def consistency_counts(
    depths: Sequence[np.ndarray], cams: Sequence[CameraModel], index: int, pixel_threshold: float
) -> np.ndarray:
    """Per pixel of view ``index``, how many other views reproject within the threshold."""
    counts = np.zeros(cams[index].shape, dtype=np.int64)
    for j, (d, cam) in enumerate(zip(depths, cams)):
        if j == index:
            continue
        err = reprojection_error_map(cams[index], depths[index], cam, d)
        counts += err <= pixel_threshold
    return counts


def filter_mask(
    depths: Sequence[np.ndarray],
    confs: Sequence[np.ndarray],
    cams: Sequence[CameraModel],
    index: int,
    params: FilterParams,
) -> np.ndarray:
    depth = depths[index]
    keep = np.isfinite(depth) & (np.nan_to_num(confs[index], nan=-1.0) >= params.confidence_threshold)
    if params.min_consistent > 0:
        keep &= consistency_counts(depths, cams, index, params.pixel_threshold) >= params.min_consistent
    return keep


def depth_to_cloud(
    depths: Sequence[np.ndarray],
    confs: Sequence[np.ndarray],
    cams: Sequence[CameraModel],
    params: FilterParams = FilterParams(),
) -> PointCloud:
    """Merge per-view depth maps into one cloud, keeping consistent confident pixels.

    A pixel survives when its confidence reaches the threshold and at least
    ``min_consistent`` other views reproject it back within ``pixel_threshold``
    pixels.
    """
    if not depths:
        raise ValueError("need at least one view")
    clouds = []
    for i, cam in enumerate(cams):
        keep = filter_mask(depths, confs, cams, i, params)
        pts = backproject_map(cam, depths[i])
        clouds.append(PointCloud(pts[keep], confs[i][keep], np.full(int(keep.sum()), i)))
    return PointCloud.concatenate(clouds)
