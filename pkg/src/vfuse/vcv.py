"""Three-channel visibility constraint volume.

For every reference pixel ``p`` and hypothesis ``S_q`` on its ray:

* support (channel 0): ``mean_v C_v exp(-(S_q - D_v)^2 / (2 sigma_p^2))``
* occlusion (channel 1): ``mean_v C_v sigmoid(lambda_p (S_q - D_v))``
* free-space violation (channel 2): ``mean_v C_v sigmoid(lambda_p (D_v - S_q^v))``

Support and occlusion use the maps rendered into the reference view and average
over the K views valid at the pixel. Free-space uses the original source maps,
read at the pixel where the hypothesis lands in each source view, and averages
over the views in which that voxel is visible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import CameraModel, RenderedViewSet, View, in_bounds, nearest_pixel, pixel_rays, relative_pose, transfer
from .swe import SceneDepthBounds, SearchWindowField

SUPPORT, OCCLUSION, FREESPACE = 0, 1, 2

_CLAMP = 500.0


@dataclass(frozen=True)
class ConstraintParams:
    gamma_sigma: float = 1.0
    gamma_lambda: float = 1.0

    def __post_init__(self):
        for name in ("gamma_sigma", "gamma_lambda"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val}")

    def to_dict(self) -> dict:
        return {"gamma_sigma": float(self.gamma_sigma), "gamma_lambda": float(self.gamma_lambda)}


@dataclass
class ConstraintVolume:
    volume: np.ndarray  # (H, W, M, 3)
    k_pixel: np.ndarray  # (H, W) views behind support/occlusion
    k_freespace: np.ndarray  # (H, W, M) views behind free-space, per voxel
    hyps: np.ndarray | None = None  # (H, W, M) depths the volume was sampled at

    @property
    def support(self) -> np.ndarray:
        return self.volume[..., SUPPORT]

    @property
    def occlusion(self) -> np.ndarray:
        return self.volume[..., OCCLUSION]

    @property
    def freespace(self) -> np.ndarray:
        return self.volume[..., FREESPACE]

    @property
    def nbytes(self) -> int:
        return self.volume.nbytes

    def export(self, path: str | Path) -> None:
        """Write the volume as raw little-endian float32 plus a JSON shape header."""
        path = Path(path)
        h, w, m, ch = self.volume.shape
        path.write_bytes(self.volume.astype("<f4").tobytes(order="C"))
        header = {"H": h, "W": w, "M": m, "channels": ch, "dtype": "float32", "byte_order": "little"}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2) + "\n")


def load_volume(path: str | Path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(header["H"], header["W"], header["M"], header["channels"]).astype(np.float64)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -_CLAMP, _CLAMP)))


def sigma_p(b_min, b_max, bounds: SceneDepthBounds, n_hyp: int, gamma_sigma: float) -> np.ndarray:
    """Gaussian width of the support response, per pixel."""
    return gamma_sigma * (np.asarray(b_max) - np.asarray(b_min)) / (n_hyp * bounds.range)


def lambda_p(b_min, b_max, bounds: SceneDepthBounds, n_hyp: int, gamma_lambda: float) -> np.ndarray:
    """Sigmoid slope of the occlusion and free-space responses, per pixel."""
    return gamma_lambda * n_hyp * bounds.range / (np.asarray(b_max) - np.asarray(b_min))


def _mean_over(total: np.ndarray, k: np.ndarray) -> np.ndarray:
    return np.where(k > 0, total / np.maximum(k, 1), 0.0)


def support_channel(rendered: RenderedViewSet, hyps: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    sig = np.asarray(sigma, dtype=np.float64)[..., None]
    total = np.zeros(hyps.shape)
    for d, c in zip(rendered.depths, rendered.confidences):
        ok = np.isfinite(d)
        diff = hyps - np.where(ok, d, 0.0)[..., None]
        term = np.where(ok, c, 0.0)[..., None] * np.exp(-(diff**2) / (2.0 * sig**2))
        total += np.where(ok[..., None], term, 0.0)
    return _mean_over(total, rendered.valid_count[..., None])


def occlusion_channel(rendered: RenderedViewSet, hyps: np.ndarray, lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)[..., None]
    total = np.zeros(hyps.shape)
    for d, c in zip(rendered.depths, rendered.confidences):
        ok = np.isfinite(d)
        term = np.where(ok, c, 0.0)[..., None] * sigmoid(lam * (hyps - np.where(ok, d, 0.0)[..., None]))
        total += np.where(ok[..., None], term, 0.0)
    return _mean_over(total, rendered.valid_count[..., None])


@dataclass
class FreespaceLookup:
    """Where each reference voxel lands in one source view."""

    ok: np.ndarray  # (H, W, M) voxel visible and source depth valid
    src_depth: np.ndarray  # source depth at landing pixel (0 where not ok)
    src_conf: np.ndarray
    hyp_depth: np.ndarray  # voxel depth in the source camera
    slope: np.ndarray  # d(hyp_depth)/d(S), (H, W, 1)


def freespace_lookup(view: View, ref_cam: CameraModel, hyps: np.ndarray) -> FreespaceLookup:
    cam = view.camera
    h, w, _ = hyps.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    us, vs, zs = transfer(ref_cam, cam, u[..., None], v[..., None], hyps)
    if ref_cam.same_as(cam):
        slope = np.ones((h, w, 1))
    else:
        rot, _ = relative_pose(ref_cam, cam)
        slope = (pixel_rays(ref_cam) @ rot[2])[..., None]
    ok = zs > 0
    iu = np.where(ok, nearest_pixel(np.where(ok, us, 0.0)), -1)
    iv = np.where(ok, nearest_pixel(np.where(ok, vs, 0.0)), -1)
    ok &= in_bounds(cam, iu, iv)
    iu_c = np.where(ok, iu, 0)
    iv_c = np.where(ok, iv, 0)
    d_src = view.depth[iv_c, iu_c]
    c_src = view.confidence[iv_c, iu_c]
    ok &= np.isfinite(d_src)
    return FreespaceLookup(
        ok=ok,
        src_depth=np.where(ok, d_src, 0.0),
        src_conf=np.where(ok, c_src, 0.0),
        hyp_depth=np.where(ok, zs, 0.0),
        slope=slope,
    )


def freespace_channel(
    views: Sequence[View],
    hyps: np.ndarray,
    lam: np.ndarray,
    ref_cam: CameraModel,
    lookups: Sequence[FreespaceLookup] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Free-space violation channel and its per-voxel view count."""
    lam = np.asarray(lam, dtype=np.float64)[..., None]
    if lookups is None:
        lookups = [freespace_lookup(view, ref_cam, hyps) for view in views]
    total = np.zeros(hyps.shape)
    k = np.zeros(hyps.shape, dtype=np.int64)
    for lk in lookups:
        term = lk.src_conf * sigmoid(lam * (lk.src_depth - lk.hyp_depth))
        total += np.where(lk.ok, term, 0.0)
        k += lk.ok
    return _mean_over(total, k), k


def build_vcv(
    views: Sequence[View],
    rendered: RenderedViewSet,
    hyps: np.ndarray,
    params: ConstraintParams,
    windows: SearchWindowField,
    bounds: SceneDepthBounds,
    ref_cam: CameraModel,
    lookups: Sequence[FreespaceLookup] | None = None,
) -> ConstraintVolume:
    """Assemble support, occlusion and free-space channels into one volume."""
    if hyps.shape[:2] != rendered.shape:
        raise ValueError("hypothesis volume does not match the rendered maps")
    n_hyp = hyps.shape[-1]
    sig = sigma_p(windows.b_min, windows.b_max, bounds, n_hyp, params.gamma_sigma)
    lam = lambda_p(windows.b_min, windows.b_max, bounds, n_hyp, params.gamma_lambda)
    sup = support_channel(rendered, hyps, sig)
    occ = occlusion_channel(rendered, hyps, lam)
    fsv, k_fsv = freespace_channel(views, hyps, lam, ref_cam, lookups)
    return ConstraintVolume(np.stack([sup, occ, fsv], axis=-1), rendered.valid_count.copy(), k_fsv, hyps)
