"""Per-reference-view fusion pipeline with analytic gradients.

``prepare_reference`` computes everything that does not depend on the fittable
parameters (rendering, window features). ``forward`` runs window prediction,
constraint volume, aggregation and soft-argmax. ``backward`` propagates
gradients of a loss on the fused depth and window radii back to the flat
parameter vector::

    theta[0..4], gamma_sigma, gamma_lambda, w_sup, w_occ, w_fsv, temperature

Nearest-pixel lookups in the free-space channel are piecewise constant in the
hypothesis depth; their derivative is taken as zero, which is exact wherever
the landing pixel does not change.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .fusion import (
    AggregatorParams,
    _check_radius,
    aligned_smooth,
    aligned_smooth_adjoint,
    fused_confidence,
    probabilities,
    probability_confidence,
    soft_argmax,
)
from .geometry import CameraModel, RenderedViewSet, View, render_all_into_reference
from .swe import (
    CenterStrategy,
    SceneDepthBounds,
    SearchWindowField,
    WindowFeatures,
    WindowPredictorParams,
    compute_features,
    full_range_windows,
    predict_window,
    predictor_inputs,
    uniform_hypotheses,
    windowed_hypotheses,
)
from .vcv import (
    ConstraintParams,
    ConstraintVolume,
    FreespaceLookup,
    build_vcv,
    freespace_lookup,
    lambda_p,
    sigma_p,
    sigmoid,
)

PARAM_NAMES = (
    "theta0",
    "theta1",
    "theta2",
    "theta3",
    "theta4",
    "gamma_sigma",
    "gamma_lambda",
    "w_sup",
    "w_occ",
    "w_fsv",
    "temperature",
)
N_PARAMS = len(PARAM_NAMES)
IDX_GAMMA_SIGMA = 5
IDX_GAMMA_LAMBDA = 6
IDX_W = slice(7, 10)
IDX_TEMPERATURE = 10

MODES = ("vcv", "brute-force", "conventional")


@dataclass(frozen=True)
class FusionParams:
    window: WindowPredictorParams = field(default_factory=WindowPredictorParams)
    constraint: ConstraintParams = field(default_factory=ConstraintParams)
    aggregator: AggregatorParams = field(default_factory=AggregatorParams)

    def to_vector(self) -> np.ndarray:
        a = self.aggregator
        return np.concatenate(
            [
                self.window.theta,
                [self.constraint.gamma_sigma, self.constraint.gamma_lambda],
                [a.w_sup, a.w_occ, a.w_fsv, a.temperature],
            ]
        )

    def with_vector(self, x) -> "FusionParams":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {x.shape}")
        window = WindowPredictorParams(x[:5], self.window.psi_min, self.window.psi_max)
        constraint = ConstraintParams(float(x[5]), float(x[6]))
        aggregator = replace(
            self.aggregator,
            w_sup=float(x[7]),
            w_occ=float(x[8]),
            w_fsv=float(x[9]),
            temperature=float(x[10]),
        )
        return FusionParams(window, constraint, aggregator)

    def to_dict(self) -> dict:
        return {
            "window": self.window.to_dict(),
            "constraint": self.constraint.to_dict(),
            "aggregator": self.aggregator.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FusionParams":
        return cls(
            WindowPredictorParams.from_dict(data.get("window", {})),
            ConstraintParams(**data.get("constraint", {})),
            AggregatorParams.from_dict(data.get("aggregator", {})),
        )


def select_sources(cameras: Sequence[CameraModel], ref_index: int, n_sources: int) -> list[int]:
    """Indices of the ``n_sources`` cameras whose optical axes are closest in angle."""
    ref_axis = cameras[ref_index].optical_axis
    others = [i for i in range(len(cameras)) if i != ref_index]
    angles = [float(np.arccos(np.clip(cameras[i].optical_axis @ ref_axis, -1.0, 1.0))) for i in others]
    order = sorted(range(len(others)), key=lambda j: (angles[j], others[j]))
    return [others[j] for j in order[:n_sources]]


@dataclass
class ReferenceInputs:
    """Parameter-independent inputs for fusing one reference view."""

    views: list[View]  # reference first
    rendered: RenderedViewSet
    features: WindowFeatures
    design: np.ndarray
    bounds: SceneDepthBounds
    n_hyp: int
    mode: str = "vcv"

    @property
    def ref_cam(self) -> CameraModel:
        return self.views[0].camera

    @property
    def shape(self) -> tuple[int, int]:
        return self.rendered.shape


def prepare_reference(
    views: Sequence[View],
    bounds: SceneDepthBounds,
    n_hyp: int,
    mode: str = "vcv",
    center_strategy: CenterStrategy | str = CenterStrategy.MOST_CONFIDENT,
) -> ReferenceInputs:
    """Render ``views`` into ``views[0]`` and compute window features."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if n_hyp < 2:
        raise ValueError("need at least 2 hypotheses")
    views = list(views)
    rendered = render_all_into_reference(views, views[0].camera)
    features = compute_features(rendered, center_strategy)
    return ReferenceInputs(
        views=views,
        rendered=rendered,
        features=features,
        design=predictor_inputs(features, bounds),
        bounds=bounds,
        n_hyp=n_hyp,
        mode=mode,
    )


@dataclass
class ForwardResult:
    windows: SearchWindowField
    hyps: np.ndarray
    lookups: list[FreespaceLookup]
    cv: ConstraintVolume
    sigma: np.ndarray
    lam: np.ndarray
    smoothed: np.ndarray
    scores: np.ndarray
    prob: np.ndarray
    depth: np.ndarray
    confidence: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.cv.k_pixel > 0


def forward(inputs: ReferenceInputs, params: FusionParams) -> ForwardResult:
    if inputs.mode == "conventional":
        raise ValueError("conventional mode has no differentiable forward pass")
    has = inputs.features.valid
    if inputs.mode == "brute-force":
        windows = full_range_windows(inputs.bounds, inputs.shape, has)
        hyps = uniform_hypotheses(inputs.bounds, inputs.n_hyp, inputs.shape)
    else:
        windows = predict_window(inputs.features, params.window, inputs.bounds)
        hyps = windowed_hypotheses(windows, inputs.n_hyp)
    lookups = [freespace_lookup(v, inputs.ref_cam, hyps) for v in inputs.views]
    cv = build_vcv(
        inputs.views, inputs.rendered, hyps, params.constraint, windows, inputs.bounds, inputs.ref_cam, lookups
    )
    _check_radius(inputs.shape, params.aggregator.smoothing_radius)
    smoothed = aligned_smooth(cv.volume, hyps, params.aggregator.smoothing_radius)
    scores = smoothed @ params.aggregator.weights
    prob = probabilities(scores, cv.k_pixel, params.aggregator.temperature)
    depth = soft_argmax(hyps, prob, has)
    if inputs.mode == "brute-force":
        conf = probability_confidence(prob, has)
    else:
        conf = fused_confidence(windows)
    m = inputs.n_hyp
    return ForwardResult(
        windows=windows,
        hyps=hyps,
        lookups=lookups,
        cv=cv,
        sigma=sigma_p(windows.b_min, windows.b_max, inputs.bounds, m, params.constraint.gamma_sigma),
        lam=lambda_p(windows.b_min, windows.b_max, inputs.bounds, m, params.constraint.gamma_lambda),
        smoothed=smoothed,
        scores=scores,
        prob=prob,
        depth=depth,
        confidence=conf,
    )


def backward(
    inputs: ReferenceInputs,
    params: FusionParams,
    fwd: ForwardResult,
    grad_depth: np.ndarray,
    grad_radius: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameter vector.

    ``grad_depth`` is dL/dD^f per pixel (ignored on invalid rays) and
    ``grad_radius`` an optional direct dL/dR per pixel.
    """
    agg = params.aggregator
    con = params.constraint
    has = fwd.valid
    hyps, prob = fwd.hyps, fwd.prob
    m = inputs.n_hyp
    grad = np.zeros(N_PARAMS)

    g_depth = np.where(has, np.nan_to_num(grad_depth), 0.0)[..., None]
    g_hyp = prob * g_depth
    g_prob = hyps * g_depth

    # softmax over depth, tempered
    y = fwd.scores / agg.temperature
    g_y = prob * (g_prob - np.sum(prob * g_prob, axis=-1, keepdims=True))
    g_y[~has] = 0.0
    grad[IDX_TEMPERATURE] = np.sum(g_y * (-y / agg.temperature))
    g_score = g_y / agg.temperature

    # channel mix after (depth-aligned) smoothing
    radius = agg.smoothing_radius
    g_mix = np.einsum("hwm,hwmc->c", g_score, fwd.smoothed)
    grad[7], grad[8], grad[9] = g_mix[0], -g_mix[1], -g_mix[2]
    g_smoothed = g_score[..., None] * agg.weights
    g_vol, g_hyp_align = aligned_smooth_adjoint(fwd.cv.volume, hyps, radius, g_smoothed)
    g_hyp = g_hyp + g_hyp_align
    g_sup, g_occ, g_fsv = g_vol[..., 0], g_vol[..., 1], g_vol[..., 2]

    sig = fwd.sigma[..., None]
    lam = fwd.lam[..., None]
    g_sig = np.zeros(inputs.shape)
    g_lam = np.zeros(inputs.shape)

    rendered = inputs.rendered
    k_pix = np.maximum(rendered.valid_count, 1)[..., None].astype(np.float64)
    for d, c in zip(rendered.depths, rendered.confidences):
        ok = np.isfinite(d)[..., None]
        delta = hyps - np.where(ok[..., 0], d, 0.0)[..., None]
        cw = np.where(ok[..., 0], c, 0.0)[..., None] / k_pix
        e = np.exp(-(delta**2) / (2.0 * sig**2))
        a = np.where(ok, cw * e, 0.0)
        g_hyp += g_sup * a * (-delta / sig**2)
        g_sig += np.sum(g_sup * a * delta**2 / sig**3, axis=-1)
        s = sigmoid(lam * delta)
        b = np.where(ok, cw * s * (1.0 - s), 0.0)
        g_hyp += g_occ * b * lam
        g_lam += np.sum(g_occ * b * delta, axis=-1)

    k_fsv = np.maximum(fwd.cv.k_freespace, 1).astype(np.float64)
    for lk in fwd.lookups:
        delta = lk.src_depth - lk.hyp_depth
        s = sigmoid(lam * delta)
        b = np.where(lk.ok, lk.src_conf * s * (1.0 - s) / k_fsv, 0.0)
        g_hyp += g_fsv * b * lam * (-lk.slope)
        g_lam += np.sum(g_fsv * b * delta, axis=-1)

    g_sig = np.where(has, g_sig, 0.0)
    g_lam = np.where(has, g_lam, 0.0)
    grad[IDX_GAMMA_SIGMA] = np.sum(g_sig * fwd.sigma) / con.gamma_sigma
    grad[IDX_GAMMA_LAMBDA] = np.sum(g_lam * fwd.lam) / con.gamma_lambda

    if inputs.mode == "brute-force":
        return grad

    win = fwd.windows
    alpha = np.arange(m, dtype=np.float64) / (m - 1)
    g_r = np.sum(g_hyp * (2.0 * alpha - 1.0), axis=-1)
    g_r += (g_sig * fwd.sigma - g_lam * fwd.lam) / win.radius
    if grad_radius is not None:
        g_r += np.nan_to_num(grad_radius)
    out = win.output
    g_z = np.where(inputs.features.valid, g_r * win.r_max * out * (1.0 - out), 0.0)
    grad[:5] = np.einsum("hw,hwk->k", g_z, inputs.design)
    return grad


@dataclass
class ReferenceResult:
    depth: np.ndarray
    confidence: np.ndarray
    windows: SearchWindowField
    forward: ForwardResult | None = None


def fuse_reference(inputs: ReferenceInputs, params: FusionParams) -> ReferenceResult:
    """Fuse one reference view in the mode recorded on ``inputs``."""
    if inputs.mode == "conventional":
        from .fusion import conventional_fuse

        out = conventional_fuse(
            inputs.rendered, inputs.views, inputs.ref_cam, params.constraint, inputs.bounds, inputs.n_hyp
        )
        windows = full_range_windows(inputs.bounds, inputs.shape, inputs.features.valid)
        return ReferenceResult(out.depth, out.confidence, windows)
    fwd = forward(inputs, params)
    return ReferenceResult(fwd.depth, fwd.confidence, fwd.windows, fwd)
