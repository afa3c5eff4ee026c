"""On-disk layout of synthetic scene directories and fused-output directories.

Scene directory::

    scene.json              scene spec, depth bounds, view count
    cameras/000.json        one camera per view
    inputs/depth_000.pfm    input depth (or .png with a .png.json scale sidecar)
    inputs/conf_000.pfm     input confidence
    gt/depth_000.pfm        ground-truth depth
    gt/outliers_000.pfm     1 where the input pixel is an injected outlier

Fused directory::

    depth_000.pfm, conf_000.pfm      fused depth and confidence
    bmin_000.pfm, bmax_000.pfm       per-pixel search window bounds
    window_000.json                  window statistics, sources, parameters
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evalbench.scenes import Scene
from .geometry import CameraModel, View
from .io import DataError, read_camera, read_json, read_map, write_camera, write_json, write_pfm, write_png16
from .swe import SceneDepthBounds

MAP_FORMATS = ("pfm", "png")


def view_name(i: int) -> str:
    return f"{i:03d}"


def write_map(path: Path, data: np.ndarray, fmt: str) -> None:
    if fmt == "png":
        write_png16(path.with_suffix(".png"), data)
    else:
        write_pfm(path.with_suffix(".pfm"), data)


def find_map(stem: Path) -> Path:
    for suffix in (".pfm", ".png"):
        cand = stem.with_suffix(suffix)
        if cand.is_file():
            return cand
    raise DataError(f"missing map {stem}.pfm (or .png)")


def write_scene(root: str | Path, scene: Scene, map_format: str = "pfm") -> None:
    if map_format not in MAP_FORMATS:
        raise ValueError(f"unknown map format {map_format!r}; expected one of {MAP_FORMATS}")
    root = Path(root)
    for sub in ("cameras", "inputs", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    spec = scene.spec
    write_json(
        root / "scene.json",
        {
            "spec": spec.to_dict(),
            "bounds": {"b_min": spec.b_min, "b_max": spec.b_max},
            "n_views": len(scene.views),
        },
    )
    for i, view in enumerate(scene.views):
        name = view_name(i)
        write_camera(root / "cameras" / f"{name}.json", view.camera)
        write_map(root / "inputs" / f"depth_{name}", view.depth, map_format)
        write_map(root / "inputs" / f"conf_{name}", view.confidence, map_format)
        write_pfm(root / "gt" / f"depth_{name}.pfm", scene.gt_depths[i])
        write_pfm(root / "gt" / f"outliers_{name}.pfm", scene.outlier_masks[i].astype(np.float64))


@dataclass
class SceneData:
    root: Path
    bounds: SceneDepthBounds
    views: list[View]
    gt_depths: list[np.ndarray] | None
    outlier_masks: list[np.ndarray] | None

    @property
    def cameras(self) -> list[CameraModel]:
        return [v.camera for v in self.views]


def read_scene(root: str | Path, need_gt: bool = False) -> SceneData:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"scene directory {root} does not exist")
    meta = read_json(root / "scene.json")
    try:
        bounds = SceneDepthBounds(float(meta["bounds"]["b_min"]), float(meta["bounds"]["b_max"]))
        n = int(meta["n_views"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{root / 'scene.json'}: malformed ({exc})") from None
    views = []
    for i in range(n):
        name = view_name(i)
        cam = read_camera(root / "cameras" / f"{name}.json")
        depth = read_map(find_map(root / "inputs" / f"depth_{name}"))
        conf = read_map(find_map(root / "inputs" / f"conf_{name}"))
        try:
            views.append(View(depth, conf, cam, view_id=i))
        except ValueError as exc:
            raise DataError(f"view {name}: {exc}") from None
    gts = masks = None
    gt_dir = root / "gt"
    if gt_dir.is_dir():
        gts, masks = [], []
        for i, view in enumerate(views):
            name = view_name(i)
            gt = read_map(find_map(gt_dir / f"depth_{name}"))
            if gt.shape != view.camera.shape:
                raise DataError(f"ground truth {name} has shape {gt.shape}, camera is {view.camera.shape}")
            gts.append(gt)
            mpath = gt_dir / f"outliers_{name}.pfm"
            masks.append(read_map(mpath) > 0.5 if mpath.is_file() else np.zeros(gt.shape, dtype=bool))
    elif need_gt:
        raise DataError(f"scene {root} has no ground truth")
    return SceneData(root, bounds, views, gts, masks)


@dataclass
class FusedView:
    depth: np.ndarray
    confidence: np.ndarray
    b_min: np.ndarray | None
    b_max: np.ndarray | None


def write_fused(root: Path, index: int, depth, conf, b_min, b_max, sidecar: dict) -> None:
    name = view_name(index)
    write_pfm(root / f"depth_{name}.pfm", depth)
    write_pfm(root / f"conf_{name}.pfm", conf)
    write_pfm(root / f"bmin_{name}.pfm", b_min)
    write_pfm(root / f"bmax_{name}.pfm", b_max)
    write_json(root / f"window_{name}.json", sidecar)


def read_fused(root: str | Path, n_views: int) -> list[FusedView]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"fused directory {root} does not exist")
    out = []
    for i in range(n_views):
        name = view_name(i)
        depth = read_map(find_map(root / f"depth_{name}"))
        conf = read_map(find_map(root / f"conf_{name}"))
        if depth.shape != conf.shape:
            raise DataError(f"fused view {name}: depth and confidence shapes differ")
        bmin = root / f"bmin_{name}.pfm"
        bmax = root / f"bmax_{name}.pfm"
        out.append(
            FusedView(
                depth,
                conf,
                read_map(bmin) if bmin.is_file() else None,
                read_map(bmax) if bmax.is_file() else None,
            )
        )
    return out
