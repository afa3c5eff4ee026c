"""Synthetic multi-view scenes with analytic ground-truth depth.

Cameras sit on a horizontal arc looking at the origin. The layout is defined
at unit size (arc radius 1.5, objects within about 0.3 of the origin) and
multiplied by ``scale``, so the default scene is in millimetre-like units.
Ground truth comes from exact ray/surface intersection; input maps are
ground truth plus Gaussian noise, with a fraction of pixels replaced by
outliers. Input confidence falls linearly with the absolute error and carries
a small seeded jitter.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..geometry import CameraModel, View, backproject_map, pixel_rays
from ..swe import SceneDepthBounds
from .cloud import PointCloud

SURFACE_KINDS = ("plane", "sphere", "step", "two-plane-occluder")
OUTLIER_KINDS = ("uniform", "offset")


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    # Half-space clips a . x <= b restricting the plane to a patch.
    clips: tuple = ()

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        p0 = np.asarray(self.point, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - origins) @ n) / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        t = np.where(t > 0, t, np.inf)
        if self.clips:
            hit = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
            for a, b in self.clips:
                t = np.where(hit @ np.asarray(a, dtype=np.float64) <= b, t, np.inf)
        return t


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origins - np.asarray(self.center, dtype=np.float64)
        a = np.sum(dirs * dirs, axis=1)
        b = 2.0 * np.sum(oc * dirs, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius**2
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - root) / (2 * a)
        t1 = (-b + root) / (2 * a)
        t = np.where(t0 > 0, t0, np.where(t1 > 0, t1, np.inf))
        return np.where(disc >= 0, t, np.inf)


def surfaces_for(kind: str, scale: float = 1.0) -> list:
    k = float(scale)
    if kind == "plane":
        return [Plane((0.0, 0.0, 0.0), (-0.3, 0.1, -1.0))]
    if kind == "sphere":
        return [Sphere((0.0, 0.0, 0.0), 0.25 * k), Plane((0.0, 0.0, 0.25 * k), (0.05, -0.05, -1.0))]
    if kind == "step":
        return [
            Plane((0.0, 0.0, -0.1 * k), (0.0, 0.0, -1.0), (((1.0, 0.0, 0.0), 0.0),)),
            Plane((0.0, 0.0, 0.15 * k), (0.0, 0.0, -1.0), (((-1.0, 0.0, 0.0), 0.0),)),
            Plane((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (((0.0, 0.0, 1.0), 0.15 * k), ((0.0, 0.0, -1.0), 0.1 * k))),
        ]
    if kind == "two-plane-occluder":
        rect = (
            ((1.0, 0.0, 0.0), 0.15 * k),
            ((-1.0, 0.0, 0.0), 0.15 * k),
            ((0.0, 1.0, 0.0), 0.2 * k),
            ((0.0, -1.0, 0.0), 0.2 * k),
        )
        return [Plane((0.0, 0.0, 0.25 * k), (0.0, 0.0, -1.0)), Plane((0.0, 0.0, -0.2 * k), (0.0, 0.0, -1.0), rect)]
    raise ValueError(f"unknown surface kind {kind!r}; expected one of {SURFACE_KINDS}")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    kind: str = "sphere"
    n_cameras: int = 5
    arc_degrees: float = 30.0
    # Arc radius is in layout units; world distances are ``scale`` times larger.
    arc_radius: float = 1.5
    scale: float = 500.0
    width: int = 100
    height: int = 100
    fov_degrees: float = 40.0
    b_min: float = 500.0
    b_max: float = 1100.0
    noise_frac: float = 0.01
    outlier_frac: float = 0.1
    outlier_kind: str = "uniform"
    # Outliers land at least this far (fraction of range) from the truth.
    outlier_min_offset: float = 0.05
    conf_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}; expected one of {SURFACE_KINDS}")
        if self.outlier_kind not in OUTLIER_KINDS:
            raise ValueError(f"unknown outlier kind {self.outlier_kind!r}; expected one of {OUTLIER_KINDS}")
        for name in ("noise_frac", "outlier_frac", "outlier_min_offset", "conf_jitter"):
            val = getattr(self, name)
            if not 0 <= val <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if self.n_cameras < 1:
            raise ValueError("need at least one camera")
        if self.arc_radius <= 0 or self.scale <= 0:
            raise ValueError("camera arc radius and scene scale must be positive")
        if self.n_cameras > 1 and not 0 < self.arc_degrees < 180:
            raise ValueError("camera arc must span (0, 180) degrees for more than one camera")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not 0 < self.fov_degrees < 170:
            raise ValueError("field of view must lie in (0, 170) degrees")
        SceneDepthBounds(self.b_min, self.b_max)

    @property
    def bounds(self) -> SceneDepthBounds:
        return SceneDepthBounds(self.b_min, self.b_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSceneSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Scene:
    spec: SyntheticSceneSpec
    views: list[View]
    gt_depths: list[np.ndarray]
    outlier_masks: list[np.ndarray]
    gt_cloud: PointCloud = field(repr=False)

    @property
    def cameras(self) -> list[CameraModel]:
        return [v.camera for v in self.views]

    @property
    def bounds(self) -> SceneDepthBounds:
        return self.spec.bounds

    def subset(self, indices: Sequence[int]) -> list[View]:
        return [self.views[i] for i in indices]


def arc_cameras(spec: SyntheticSceneSpec) -> list[CameraModel]:
    f = 0.5 * spec.width / np.tan(np.radians(spec.fov_degrees) / 2)
    cx = (spec.width - 1) / 2
    cy = (spec.height - 1) / 2
    if spec.n_cameras == 1:
        angles = np.zeros(1)
    else:
        angles = np.radians(np.linspace(-spec.arc_degrees / 2, spec.arc_degrees / 2, spec.n_cameras))
    cams = []
    for phi in angles:
        eye = spec.arc_radius * spec.scale * np.array([np.sin(phi), 0.0, -np.cos(phi)])
        cams.append(CameraModel.look_at(eye, (0, 0, 0), (0, -1, 0), f, f, cx, cy, spec.width, spec.height))
    return cams


def ray_depths(cam: CameraModel, surfaces: Sequence) -> np.ndarray:
    """Analytic depth map for ``cam``; NaN where no surface is hit."""
    dirs = (pixel_rays(cam) @ cam.rotation).reshape(-1, 3)
    origins = np.broadcast_to(cam.center, dirs.shape)
    t = np.full(dirs.shape[0], np.inf)
    for surf in surfaces:
        t = np.minimum(t, surf.intersect(origins, dirs))
    return np.where(np.isfinite(t), t, np.nan).reshape(cam.shape)


def _outlier_values(rng, gt, spec: SyntheticSceneSpec):
    rng_span = spec.b_max - spec.b_min
    gap = spec.outlier_min_offset * rng_span
    if spec.outlier_kind == "offset":
        sign = np.where(rng.random(gt.shape) < 0.5, -1.0, 1.0)
        mag = gap + rng.random(gt.shape) * (0.5 * rng_span - gap)
        return np.maximum(gt + sign * mag, 1e-6)
    # Uniform over the bounds, excluding a band of half-width ``gap`` around
    # the truth by sampling the remaining length and mapping it back.
    lo = np.clip(gt - gap, spec.b_min, spec.b_max)
    hi = np.clip(gt + gap, spec.b_min, spec.b_max)
    below = lo - spec.b_min
    above = spec.b_max - hi
    total = below + above
    draw = rng.random(gt.shape) * total
    vals = np.where(draw < below, spec.b_min + draw, hi + (draw - below))
    vals = np.where(total > 0, vals, spec.b_min + rng.random(gt.shape) * rng_span)
    return np.maximum(vals, 1e-6)


def confidence_from_error(err: np.ndarray, noise_std: float, jitter: np.ndarray) -> np.ndarray:
    if noise_std > 0:
        base = np.clip(1.0 - err / (3.0 * noise_std), 0.0, 1.0)
    else:
        base = np.where(err == 0, 1.0, 0.0)
    return np.clip(base + jitter, 0.0, 1.0)


def generate_scene(spec: SyntheticSceneSpec) -> Scene:
    cams = arc_cameras(spec)
    surfaces = surfaces_for(spec.kind, spec.scale)
    rng = np.random.default_rng(spec.seed)
    noise_std = spec.noise_frac * (spec.b_max - spec.b_min)

    views, gts, masks, clouds = [], [], [], []
    for i, cam in enumerate(cams):
        gt = ray_depths(cam, surfaces)
        valid = np.isfinite(gt)
        # Draw every random field at full size so streams do not depend on coverage.
        noise = rng.normal(0.0, 1.0, cam.shape) * noise_std
        outlier = (rng.random(cam.shape) < spec.outlier_frac) & valid
        outvals = _outlier_values(rng, np.where(valid, gt, spec.b_min), spec)
        jitter = (rng.random(cam.shape) * 2.0 - 1.0) * spec.conf_jitter

        depth = np.where(outlier, outvals, gt + noise)
        depth = np.where(valid, np.maximum(depth, 1e-6), np.nan)
        err = np.abs(np.nan_to_num(depth - gt))
        conf = np.where(valid, confidence_from_error(err, noise_std, jitter), np.nan)
        views.append(View(depth, conf, cam, view_id=i))
        gts.append(gt)
        masks.append(outlier)
        clouds.append(_cloud_from_depth(gt, np.where(valid, 1.0, np.nan), cam, i))
    return Scene(spec, views, gts, masks, PointCloud.concatenate(clouds))


def _cloud_from_depth(depth, conf, cam, view_id) -> PointCloud:
    pts = backproject_map(cam, depth)
    ok = np.isfinite(depth)
    return PointCloud(pts[ok], conf[ok], np.full(int(ok.sum()), view_id, dtype=np.int64))
