"""Pinhole cameras, projection, and cross-view rendering of depth maps.

Pixel coordinates are ``(u, v)`` = (column, row) with integer values at pixel
centres. Depth is the z-coordinate in the camera frame. Missing depth and
confidence values are encoded as NaN (:data:`SENTINEL`); zero is a legal
degenerate boundary, never a sentinel.

Vectorised routines operate on whole maps; the scalar helpers (:func:`project`,
:func:`unproject`, :func:`reproject_hypothesis`, :func:`reprojection_error`) are
kept deliberately simple so they can serve as independent oracles in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

SENTINEL = float("nan")

_ORTHO_TOL = 1e-9


def is_valid(values: np.ndarray) -> np.ndarray:
    """Mask of entries holding an estimate (not the sentinel)."""
    return np.isfinite(values)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole intrinsics plus a world-to-camera pose ``x_cam = R x_world + t``."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("camera pose must be finite")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, cx, cy, width, height) -> "CameraModel":
        """Camera at ``eye`` whose optical axis points at ``target``.

        The image ``v`` axis points along ``-up`` (rows grow downwards).
        """
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise ValueError("eye and target coincide")
        z = forward / norm
        x = np.cross(-np.asarray(up, dtype=np.float64), z)
        if np.linalg.norm(x) < 1e-12:
            raise ValueError("up vector is parallel to the viewing direction")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        return cls(fx, fy, cx, cy, rot, -rot @ eye, width, height)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction in world coordinates."""
        return self.rotation[2].copy()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def same_as(self, other: "CameraModel") -> bool:
        """Exact parameter equality (used to short-circuit identity warps)."""
        return (
            self is other
            or (
                self.fx == other.fx
                and self.fy == other.fy
                and self.cx == other.cx
                and self.cy == other.cy
                and self.width == other.width
                and self.height == other.height
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation)
            )
        )

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        try:
            rotation = np.asarray(data["rotation"], dtype=np.float64)
            if rotation.size != 9:
                raise ValueError("rotation must hold 9 values (row-major)")
            translation = np.asarray(data["translation"], dtype=np.float64)
            if translation.size != 3:
                raise ValueError("translation must hold 3 values")
            return cls(
                float(data["fx"]),
                float(data["fy"]),
                float(data["cx"]),
                float(data["cy"]),
                rotation.reshape(3, 3),
                translation,
                int(data["width"]),
                int(data["height"]),
            )
        except KeyError as exc:
            raise ValueError(f"camera is missing field {exc.args[0]!r}") from None


@dataclass
class View:
    """One input view: a depth map, its confidence map, and the camera."""

    depth: np.ndarray
    confidence: np.ndarray
    camera: CameraModel
    view_id: int = 0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.depth.shape != self.camera.shape or self.confidence.shape != self.camera.shape:
            raise ValueError(
                f"map shapes {self.depth.shape}/{self.confidence.shape} do not match "
                f"camera {self.camera.shape}"
            )
        check_depth_map(self.depth)
        check_confidence_map(self.confidence, self.depth)


def check_depth_map(depth: np.ndarray) -> None:
    """Raise unless every estimate is finite and strictly positive."""
    vals = depth[~np.isnan(depth)]
    if vals.size and not (np.all(np.isfinite(vals)) and np.all(vals > 0)):
        raise ValueError("depth estimates must be finite and strictly positive")


def check_confidence_map(conf: np.ndarray, depth: np.ndarray | None = None) -> None:
    vals = conf[np.isfinite(conf)]
    if vals.size and (vals.min() < 0 or vals.max() > 1):
        raise ValueError("confidence values must lie in [0, 1]")
    if depth is not None and np.any(np.isfinite(depth) & ~np.isfinite(conf)):
        raise ValueError("confidence missing where depth is valid")


@dataclass
class RenderedViewSet:
    """N depth/confidence maps rendered into a common reference camera.

    ``depths`` and ``confidences`` are stacked ``(N, H, W)`` arrays; NaN marks
    pixels that received no splat.
    """

    depths: np.ndarray
    confidences: np.ndarray
    valid_count: np.ndarray = field(init=False)

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        if self.depths.ndim != 3 or self.depths.shape != self.confidences.shape:
            raise ValueError("rendered depths/confidences must be matching (N, H, W) stacks")
        self.valid_count = is_valid(self.depths).sum(axis=0)

    @property
    def n_views(self) -> int:
        return self.depths.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depths.shape[1:]

    @property
    def valid(self) -> np.ndarray:
        return is_valid(self.depths)


class Projection(NamedTuple):
    pixel: np.ndarray
    depth: float
    behind: bool


class Reprojection(NamedTuple):
    pixel: np.ndarray
    depth: float
    status: str  # "ok", "out-of-bounds" or "behind-camera"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def project(cam: CameraModel, point) -> Projection:
    """Project a world point; no bounds check is performed."""
    point = np.asarray(point, dtype=np.float64)
    if not np.all(np.isfinite(point)):
        raise ValueError("point must be finite")
    x = cam.rotation @ point + cam.translation
    depth = float(x[2])
    if depth <= 0:
        return Projection(np.array([np.nan, np.nan]), depth, True)
    pixel = np.array([cam.fx * x[0] / depth + cam.cx, cam.fy * x[1] / depth + cam.cy])
    return Projection(pixel, depth, False)


def unproject(cam: CameraModel, pixel, depth: float) -> np.ndarray:
    """World point seen at ``pixel`` with camera-frame depth ``depth``."""
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = pixel
    x_cam = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.rotation.T @ (x_cam - cam.translation)


def nearest_pixel(coord):
    """Index of the pixel whose centre is nearest (round half up)."""
    return np.floor(np.asarray(coord) + 0.5).astype(np.int64)


def in_bounds(cam: CameraModel, iu, iv):
    return (iu >= 0) & (iu < cam.width) & (iv >= 0) & (iv < cam.height)


def relative_pose(src: CameraModel, dst: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """``(R, t)`` mapping source camera coordinates to destination camera coordinates."""
    rot = dst.rotation @ src.rotation.T
    return rot, dst.translation - rot @ src.translation


def pixel_rays(cam: CameraModel) -> np.ndarray:
    """``(H, W, 3)`` camera-frame ray directions with unit z, one per pixel centre."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    return np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)


def backproject_map(cam: CameraModel, depth: np.ndarray) -> np.ndarray:
    """World points ``(H, W, 3)`` for a depth map (NaN where invalid)."""
    x_cam = pixel_rays(cam) * depth[..., None]
    return (x_cam - cam.translation) @ cam.rotation


def transfer(src: CameraModel, dst: CameraModel, u, v, depth):
    """Map source pixels with depths into the destination camera.

    Returns fractional destination coordinates and destination depths. Identical
    cameras are an exact identity.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if src.same_as(dst):
        return u.copy(), v.copy(), depth.copy()
    rot, trans = relative_pose(src, dst)
    xs = (u - src.cx) / src.fx * depth
    ys = (v - src.cy) / src.fy * depth
    xd = rot[0, 0] * xs + rot[0, 1] * ys + rot[0, 2] * depth + trans[0]
    yd = rot[1, 0] * xs + rot[1, 1] * ys + rot[1, 2] * depth + trans[1]
    zd = rot[2, 0] * xs + rot[2, 1] * ys + rot[2, 2] * depth + trans[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        ud = dst.fx * xd / zd + dst.cx
        vd = dst.fy * yd / zd + dst.cy
    return ud, vd, zd


def render_into_view(
    src_depth: np.ndarray,
    src_conf: np.ndarray,
    src_cam: CameraModel,
    dst_cam: CameraModel,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-warp a depth/confidence map into another camera with a z-buffer.

    Every valid source pixel lands on its nearest destination pixel. Where several
    land on the same pixel the smallest destination depth wins, ties going to the
    smaller source pixel index. Confidence travels unchanged with its depth.
    """
    if src_depth.shape != src_cam.shape or src_conf.shape != src_cam.shape:
        raise ValueError("source maps do not match the source camera size")
    if src_cam.same_as(dst_cam):
        out_conf = np.where(is_valid(src_depth), src_conf, SENTINEL)
        return src_depth.astype(np.float64, copy=True), out_conf

    rows, cols = np.nonzero(is_valid(src_depth))
    out_depth = np.full(dst_cam.shape, SENTINEL)
    out_conf = np.full(dst_cam.shape, SENTINEL)
    if rows.size == 0:
        return out_depth, out_conf

    ud, vd, zd = transfer(src_cam, dst_cam, cols, rows, src_depth[rows, cols])
    front = zd > 0
    iu = np.zeros_like(rows)
    iv = np.zeros_like(rows)
    iu[front] = nearest_pixel(ud[front])
    iv[front] = nearest_pixel(vd[front])
    keep = front & in_bounds(dst_cam, iu, iv)
    if not np.any(keep):
        return out_depth, out_conf

    dst_lin = iv[keep] * dst_cam.width + iu[keep]
    src_lin = rows[keep] * src_cam.width + cols[keep]
    z = zd[keep]
    conf = src_conf[rows[keep], cols[keep]]
    order = np.lexsort((src_lin, z, dst_lin))
    dst_sorted = dst_lin[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = dst_sorted[1:] != dst_sorted[:-1]
    winners = order[first]
    out_depth.reshape(-1)[dst_lin[winners]] = z[winners]
    out_conf.reshape(-1)[dst_lin[winners]] = conf[winners]
    return out_depth, out_conf


def render_all_into_reference(views: Sequence[View], ref_cam: CameraModel) -> RenderedViewSet:
    """Render every view (the reference included) into ``ref_cam``."""
    if len(views) == 0:
        raise ValueError("at least one view is required")
    depths, confs = [], []
    for view in views:
        d, c = render_into_view(view.depth, view.confidence, view.camera, ref_cam)
        depths.append(d)
        confs.append(c)
    return RenderedViewSet(np.stack(depths), np.stack(confs))


def reproject_hypothesis(
    ref_cam: CameraModel, src_cam: CameraModel, pixel, hyp_depth: float
) -> Reprojection:
    """Carry a reference-ray sample into a source view.

    Out-of-bounds and behind-camera results are reported through ``status``.
    """
    if not hyp_depth > 0:
        raise ValueError("hypothesis depth must be positive")
    if ref_cam.same_as(src_cam):
        pix = np.asarray(pixel, dtype=np.float64)
        status = "ok" if _pixel_inside(src_cam, pix) else "out-of-bounds"
        return Reprojection(pix.copy(), float(hyp_depth), status)
    proj = project(src_cam, unproject(ref_cam, pixel, hyp_depth))
    if proj.behind:
        return Reprojection(proj.pixel, proj.depth, "behind-camera")
    status = "ok" if _pixel_inside(src_cam, proj.pixel) else "out-of-bounds"
    return Reprojection(proj.pixel, proj.depth, status)


def _pixel_inside(cam: CameraModel, pixel) -> bool:
    iu, iv = nearest_pixel(pixel)
    return bool(in_bounds(cam, iu, iv))


def reprojection_error(
    ref_cam: CameraModel,
    src_cam: CameraModel,
    pixel,
    ref_depth: float,
    src_depth_map: np.ndarray,
) -> float:
    """Round-trip pixel error of a reference estimate through a source depth map.

    The estimate is projected into the source view, the source depth is read at
    the nearest pixel, and the source point at the landing position is
    projected back. Returns ``inf`` when a lookup is invalid.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    hit = reproject_hypothesis(ref_cam, src_cam, pixel, ref_depth)
    if not hit.ok:
        return float("inf")
    iu, iv = nearest_pixel(hit.pixel)
    d_src = src_depth_map[iv, iu]
    if not np.isfinite(d_src) or d_src <= 0:
        return float("inf")
    back = reproject_hypothesis(src_cam, ref_cam, hit.pixel, float(d_src))
    if back.status == "behind-camera":
        return float("inf")
    return float(np.hypot(*(back.pixel - pixel)))


def reprojection_error_map(
    ref_cam: CameraModel,
    ref_depth: np.ndarray,
    src_cam: CameraModel,
    src_depth: np.ndarray,
) -> np.ndarray:
    """Vectorised :func:`reprojection_error` for every pixel of ``ref_depth``."""
    err = np.full(ref_cam.shape, np.inf)
    rows, cols = np.nonzero(is_valid(ref_depth))
    if rows.size == 0:
        return err
    us, vs, zs = transfer(ref_cam, src_cam, cols, rows, ref_depth[rows, cols])
    ok = zs > 0
    iu = np.zeros_like(rows)
    iv = np.zeros_like(rows)
    iu[ok] = nearest_pixel(us[ok])
    iv[ok] = nearest_pixel(vs[ok])
    ok &= in_bounds(src_cam, iu, iv)
    d_src = np.full(rows.shape, np.nan)
    d_src[ok] = src_depth[iv[ok], iu[ok]]
    ok &= np.isfinite(d_src) & (d_src > 0)
    if not np.any(ok):
        return err
    ub, vb, zb = transfer(src_cam, ref_cam, us[ok], vs[ok], d_src[ok])
    dist = np.hypot(ub - cols[ok], vb - rows[ok])
    dist[~(zb > 0)] = np.inf
    err[rows[ok], cols[ok]] = dist
    return err
