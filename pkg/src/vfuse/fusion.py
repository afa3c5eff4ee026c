"""Evidence aggregation, soft-argmax depth regression, and output confidence.

The regulariser mapping the constraint volume to per-ray probabilities is a
channel mix with optional box smoothing over the image plane, followed by a
tempered softmax along depth.

When neighbouring rays carry different hypothesis ladders (per-pixel search
windows), slice ``d`` of one ray and slice ``d`` of its neighbour sit at
different depths. Smoothing then first resamples each neighbour's responses
onto the pixel's own hypothesis depths by linear interpolation along depth,
holding the end values beyond the neighbour's window. With a shared ladder
this is exactly the plain slice-wise box mean. A per-pixel conventional fusion baseline that
picks the best-scoring rendered candidate is included for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import CameraModel, RenderedViewSet, View
from .swe import SceneDepthBounds, SearchWindowField, full_range_windows
from .vcv import (
    ConstraintParams,
    ConstraintVolume,
    freespace_channel,
    lambda_p,
    occlusion_channel,
    sigma_p,
    support_channel,
)


@dataclass(frozen=True)
class AggregatorParams:
    w_sup: float = 1.0
    w_occ: float = 1.0
    w_fsv: float = 1.0
    smoothing_radius: int = 1
    temperature: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be positive")
        if int(self.smoothing_radius) != self.smoothing_radius or self.smoothing_radius < 0:
            raise ValueError("smoothing radius must be a non-negative integer")
        for name in ("w_sup", "w_occ", "w_fsv"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.w_sup, -self.w_occ, -self.w_fsv])

    def to_dict(self) -> dict:
        return {
            "w_sup": float(self.w_sup),
            "w_occ": float(self.w_occ),
            "w_fsv": float(self.w_fsv),
            "smoothing_radius": int(self.smoothing_radius),
            "temperature": float(self.temperature),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AggregatorParams":
        return cls(**{k: data[k] for k in ("w_sup", "w_occ", "w_fsv", "smoothing_radius", "temperature") if k in data})


@dataclass
class FusedOutput:
    depth: np.ndarray
    confidence: np.ndarray


def box_sum(x: np.ndarray, radius: int) -> np.ndarray:
    """Zero-padded box sum over the two leading (image) axes.

    The operator is symmetric, so it is its own adjoint.
    """
    if radius == 0:
        return x.copy()
    h, w = x.shape[:2]
    pad = [(radius, radius), (radius, radius)] + [(0, 0)] * (x.ndim - 2)
    xp = np.pad(x, pad)
    out = np.zeros_like(x)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out += xp[dy : dy + h, dx : dx + w]
    return out


def box_counts(shape: tuple[int, int], radius: int) -> np.ndarray:
    return box_sum(np.ones(shape), radius)


def box_smooth(x: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the in-bounds ``(2r+1)^2`` neighbourhood of every pixel."""
    if radius == 0:
        return x.copy()
    counts = box_counts(x.shape[:2], radius)
    return box_sum(x, radius) / counts.reshape(counts.shape + (1,) * (x.ndim - 2))


def _check_radius(shape, radius):
    if radius > min(shape) / 2:
        raise ValueError(f"smoothing radius {radius} too large for a {shape[0]}x{shape[1]} image")


def shared_ladder(hyps: np.ndarray | None) -> bool:
    """True when every ray samples the same depths (or no ladder is given)."""
    return hyps is None or bool(np.all(hyps == hyps[:1, :1]))


def _offsets(radius):
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            yield dy, dx


def _pad_image(x, radius, mode="constant"):
    pad = [(radius, radius), (radius, radius)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, pad, mode=mode)


def _resample_positions(hyps, s0_q, step_q):
    """Where each of this ray's depths falls on a neighbour's ladder.

    Returns the lower sample index ``i``, the interpolation fraction ``f``, the
    clamped fractional position ``t``, and the mask where the position lies
    within the neighbour's ladder (where it has a derivative).
    """
    m = hyps.shape[-1]
    t_raw = (hyps - s0_q[..., None]) / step_q[..., None]
    near = np.rint(t_raw)
    t = np.where(np.abs(t_raw - near) < 1e-9, near, t_raw)
    inside = (t >= 0) & (t <= m - 1)
    t = np.clip(t, 0.0, m - 1.0)
    i = np.minimum(np.floor(t), m - 2).astype(np.int64)
    return i, t - i, t, inside


def _ladder_geometry(hyps):
    m = hyps.shape[-1]
    return hyps[..., 0], (hyps[..., -1] - hyps[..., 0]) / (m - 1)


def _gather(vq, i):
    return np.take_along_axis(vq, i[..., None], axis=2)


def _padded_ladders(volume, hyps, radius):
    s0, step = _ladder_geometry(hyps)
    return _pad_image(volume, radius), _pad_image(s0, radius, "edge"), _pad_image(step, radius, "edge")


def aligned_smooth(volume: np.ndarray, hyps: np.ndarray | None, radius: int) -> np.ndarray:
    """Box mean over the image plane after resampling neighbours onto each ray's depths."""
    if radius == 0 or shared_ladder(hyps):
        return box_smooth(volume, radius)
    h, w = volume.shape[:2]
    vol_p, s0_p, step_p = _padded_ladders(volume, hyps, radius)
    out = np.zeros_like(volume)
    for dy, dx in _offsets(radius):
        sl = (slice(dy, dy + h), slice(dx, dx + w))
        i, f, _, _ = _resample_positions(hyps, s0_p[sl], step_p[sl])
        vq = vol_p[sl]
        f = f[..., None]
        out += (1.0 - f) * _gather(vq, i) + f * _gather(vq, i + 1)
    counts = box_counts((h, w), radius)
    return out / counts[..., None, None]


def _scatter_add(target, i, values):
    """``target[y, x, i[y, x, d], c] += values[y, x, d, c]`` for every ``d``."""
    h, w, m, ch = target.shape
    rows = (np.arange(h * w).reshape(h, w, 1) * m + i).reshape(-1)
    vals = values.reshape(-1, ch)
    for c in range(ch):
        target[..., c] += np.bincount(rows, weights=vals[:, c], minlength=h * w * m).reshape(h, w, m)


def aligned_smooth_adjoint(
    volume: np.ndarray, hyps: np.ndarray | None, radius: int, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None]:
    """Gradients of ``aligned_smooth`` w.r.t. the volume and the hypothesis depths."""
    h, w = volume.shape[:2]
    counts = box_counts((h, w), radius)[..., None, None]
    g = grad_out / counts
    if radius == 0 or shared_ladder(hyps):
        return box_sum(g, radius), None if hyps is None else np.zeros_like(hyps)
    m = hyps.shape[-1]
    vol_p, s0_p, step_p = _padded_ladders(volume, hyps, radius)
    g_vol_p = np.zeros_like(vol_p)
    g_s0_p = np.zeros_like(s0_p)
    g_step_p = np.zeros_like(step_p)
    g_hyps = np.zeros_like(hyps)
    for dy, dx in _offsets(radius):
        sl = (slice(dy, dy + h), slice(dx, dx + w))
        step_q = step_p[sl]
        i, f, t, inside = _resample_positions(hyps, s0_p[sl], step_q)
        vq = vol_p[sl]
        g_vq = np.zeros_like(vq)
        _scatter_add(g_vq, i, g * (1.0 - f)[..., None])
        _scatter_add(g_vq, i + 1, g * f[..., None])
        g_vol_p[sl] += g_vq
        g_t = np.where(inside, np.sum(g * (_gather(vq, i + 1) - _gather(vq, i)), axis=-1), 0.0)
        g_hyps += g_t / step_q[..., None]
        g_s0_p[sl] -= np.sum(g_t, axis=-1) / step_q
        g_step_p[sl] -= np.sum(g_t * t, axis=-1) / step_q
    core = (slice(radius, radius + h), slice(radius, radius + w))
    # Padded neighbours carry zero volume, so their ladders only ever see
    # zero slopes and the replicated border entries gather no gradient.
    g_s0 = g_s0_p[core]
    g_step = g_step_p[core]
    g_hyps[..., 0] += g_s0 - g_step / (m - 1)
    g_hyps[..., -1] += g_step / (m - 1)
    return g_vol_p[core], g_hyps


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def aggregate_scores(
    volume: np.ndarray, params: AggregatorParams, hyps: np.ndarray | None = None
) -> np.ndarray:
    """Mixed channel scores ``(H, W, M)``; ``hyps`` enables depth-aligned smoothing."""
    _check_radius(volume.shape[:2], params.smoothing_radius)
    if hyps is None:
        smoothed = box_smooth(volume, params.smoothing_radius)
    else:
        smoothed = aligned_smooth(volume, hyps, params.smoothing_radius)
    return smoothed @ params.weights


def probabilities(score: np.ndarray, k_pixel: np.ndarray, temperature: float) -> np.ndarray:
    prob = softmax(score / temperature)
    prob[k_pixel == 0] = 1.0 / score.shape[-1]
    return prob


def aggregate(cv: ConstraintVolume, params: AggregatorParams) -> np.ndarray:
    """Probability volume ``(H, W, M)``; rays with no contributing view are uniform."""
    return probabilities(aggregate_scores(cv.volume, params, cv.hyps), cv.k_pixel, params.temperature)


def soft_argmax(hyps: np.ndarray, prob: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Expected depth per ray; NaN where ``valid`` is False.

    The result is clipped to the ladder span so rounding in the probabilities
    can never push it outside.
    """
    if hyps.shape != prob.shape:
        raise ValueError("hypothesis and probability volumes differ in shape")
    depth = np.clip(np.sum(hyps * prob, axis=-1), hyps.min(axis=-1), hyps.max(axis=-1))
    if valid is not None:
        depth = np.where(valid, depth, np.nan)
    return depth


def fused_confidence(windows: SearchWindowField) -> np.ndarray:
    """``1 - normalised radius`` over the feasible range ``[r_min, r_min + r_max]``."""
    if windows.r_max <= 0:
        raise ValueError("window field has no radius range to normalise against")
    norm = (windows.radius - windows.r_min) / windows.r_max
    conf = 1.0 - np.clip(norm, 0.0, 1.0)
    return np.where(windows.valid, conf, 0.0)


def probability_confidence(prob: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Peak probability per ray, used where no search window was estimated."""
    return np.where(valid, prob.max(axis=-1), 0.0)


def conventional_fuse(
    rendered: RenderedViewSet,
    views: Sequence[View],
    ref_cam: CameraModel,
    params: ConstraintParams,
    bounds: SceneDepthBounds,
    n_hyp: int = 8,
    windows: SearchWindowField | None = None,
) -> FusedOutput:
    """Pick, per pixel, the rendered depth with the best support minus violations.

    Each of the K rendered candidates is scored by the three constraint
    responses evaluated at the candidate depth itself (no hypothesis volume, no
    smoothing). Response widths follow ``windows`` or, by default, the full
    depth range at ``n_hyp`` planes. Ties go to the lowest view index.
    """
    h, w = rendered.shape
    if windows is None:
        windows = full_range_windows(bounds, (h, w), rendered.valid_count > 0)
    valid = rendered.valid.transpose(1, 2, 0)
    cands = np.where(valid, rendered.depths.transpose(1, 2, 0), bounds.midpoint)
    sig = sigma_p(windows.b_min, windows.b_max, bounds, n_hyp, params.gamma_sigma)
    lam = lambda_p(windows.b_min, windows.b_max, bounds, n_hyp, params.gamma_lambda)
    sup = support_channel(rendered, cands, sig)
    occ = occlusion_channel(rendered, cands, lam)
    fsv, _ = freespace_channel(views, cands, lam, ref_cam)
    score = np.where(valid, sup - occ - fsv, -np.inf)
    best = np.argmax(score, axis=-1)[..., None]
    has = rendered.valid_count > 0
    depth = np.take_along_axis(cands, best, axis=-1)[..., 0]
    conf = np.take_along_axis(sup, best, axis=-1)[..., 0]
    return FusedOutput(np.where(has, depth, np.nan), np.where(has, np.clip(conf, 0.0, 1.0), np.nan))
