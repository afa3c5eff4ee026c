"""Per-pixel depth search windows and hypothesis ladders.

A window is centred on the most confident rendered estimate at each pixel and
its radius is predicted from rendered-view statistics::

    R = r_min + r_max * O,   r_min = psi_min * range,   r_max = psi_max * range
    B_min = center - R,      B_max = center + R

``O`` comes from a logistic of an affine function of normalised features; it
stands in for a learned convolutional predictor with the same inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import RenderedViewSet

N_THETA = 5


@dataclass(frozen=True)
class SceneDepthBounds:
    """Full hypothesis range ``[b_min, b_max]`` of a reference view."""

    b_min: float
    b_max: float

    def __post_init__(self):
        if not (np.isfinite(self.b_min) and np.isfinite(self.b_max)):
            raise ValueError("depth bounds must be finite")
        if self.b_min < 0 or not self.b_min < self.b_max:
            raise ValueError(f"need 0 <= b_min < b_max, got [{self.b_min}, {self.b_max}]")

    @property
    def range(self) -> float:
        return self.b_max - self.b_min

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.b_min + self.b_max)


class CenterStrategy(str, Enum):
    MOST_CONFIDENT = "most-confident"
    CONFIDENCE_WEIGHTED_MEAN = "confidence-weighted-mean"


@dataclass
class WindowFeatures:
    """Per-pixel rendered-view statistics; NaN where no view contributes."""

    depth_mean: np.ndarray
    depth_std: np.ndarray
    conf_mean: np.ndarray
    conf_std: np.ndarray
    center: np.ndarray
    valid_count: np.ndarray
    n_views: int

    @property
    def valid(self) -> np.ndarray:
        return self.valid_count > 0

    def channels(self) -> np.ndarray:
        """The five feature channels stacked as ``(H, W, 5)``."""
        return np.stack(
            [self.depth_mean, self.depth_std, self.conf_mean, self.conf_std, self.center], axis=-1
        )


@dataclass
class WindowPredictorParams:
    theta: np.ndarray = field(default_factory=lambda: np.array([-2.0, 8.0, 2.0, 2.0, 1.0]))
    psi_min: float = 0.005
    psi_max: float = 0.5

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.size != N_THETA:
            raise ValueError(f"theta must have {N_THETA} entries")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")
        if not (0 < self.psi_min < self.psi_max <= 1):
            raise ValueError(f"need 0 < psi_min < psi_max <= 1, got {self.psi_min}, {self.psi_max}")

    def to_dict(self) -> dict:
        return {
            "theta": [float(x) for x in self.theta],
            "psi_min": float(self.psi_min),
            "psi_max": float(self.psi_max),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WindowPredictorParams":
        defaults = cls()
        return cls(
            theta=data.get("theta", defaults.theta),
            psi_min=float(data.get("psi_min", defaults.psi_min)),
            psi_max=float(data.get("psi_max", defaults.psi_max)),
        )


@dataclass
class SearchWindowField:
    center: np.ndarray
    output: np.ndarray
    radius: np.ndarray
    b_min: np.ndarray
    b_max: np.ndarray
    r_min: float
    r_max: float
    valid: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.b_max - self.b_min


def compute_features(
    rendered: RenderedViewSet,
    strategy: CenterStrategy | str = CenterStrategy.MOST_CONFIDENT,
) -> WindowFeatures:
    """Mean/std of rendered depth and confidence over the K valid views, plus the centre.

    Standard deviations divide by K. The default centre is the depth of the view
    with the highest rendered confidence, ties going to the lowest view index.
    """
    strategy = CenterStrategy(strategy)
    valid = rendered.valid
    k = rendered.valid_count
    has = k > 0
    kf = np.where(has, k, 1).astype(np.float64)

    d = np.where(valid, rendered.depths, 0.0)
    c = np.where(valid, rendered.confidences, 0.0)
    d_mean = d.sum(axis=0) / kf
    c_mean = c.sum(axis=0) / kf
    d_var = np.where(valid, (rendered.depths - d_mean) ** 2, 0.0).sum(axis=0) / kf
    c_var = np.where(valid, (rendered.confidences - c_mean) ** 2, 0.0).sum(axis=0) / kf

    if strategy is CenterStrategy.MOST_CONFIDENT:
        scores = np.where(valid, rendered.confidences, -np.inf)
        best = np.argmax(scores, axis=0)
        center = np.take_along_axis(d, best[None], axis=0)[0]
    else:
        wsum = c.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            center = np.where(wsum > 0, (c * d).sum(axis=0) / wsum, d_mean)

    nan = np.nan
    return WindowFeatures(
        depth_mean=np.where(has, d_mean, nan),
        depth_std=np.where(has, np.sqrt(d_var), nan),
        conf_mean=np.where(has, c_mean, nan),
        conf_std=np.where(has, np.sqrt(c_var), nan),
        center=np.where(has, center, nan),
        valid_count=k,
        n_views=rendered.n_views,
    )


def predictor_inputs(features: WindowFeatures, bounds: SceneDepthBounds) -> np.ndarray:
    """Normalised design matrix ``(H, W, 5)`` fed to the logistic predictor.

    Columns: bias, depth std / range, 1 - confidence mean, confidence std,
    1 - K/N. Rows with K = 0 are zero.
    """
    has = features.valid
    cols = [
        np.ones(has.shape),
        features.depth_std / bounds.range,
        1.0 - features.conf_mean,
        features.conf_std,
        1.0 - features.valid_count / features.n_views,
    ]
    x = np.stack(cols, axis=-1)
    x[~has] = 0.0
    return x


def logistic(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def window_from_output(
    center: np.ndarray,
    output: np.ndarray,
    valid: np.ndarray,
    bounds: SceneDepthBounds,
    psi_min: float,
    psi_max: float,
) -> SearchWindowField:
    r_min = psi_min * bounds.range
    r_max = psi_max * bounds.range
    output = np.where(valid, output, 1.0)
    center = np.where(valid, center, bounds.midpoint)
    radius = r_min + r_max * output
    return SearchWindowField(
        center=center,
        output=output,
        radius=radius,
        b_min=center - radius,
        b_max=center + radius,
        r_min=r_min,
        r_max=r_max,
        valid=valid.copy(),
    )


def predict_window(
    features: WindowFeatures,
    params: WindowPredictorParams,
    bounds: SceneDepthBounds,
) -> SearchWindowField:
    """Search window per pixel. Pixels without evidence get the widest window at mid-range.

    Windows are not clipped to ``[b_min, b_max]``.
    """
    output = logistic(predictor_inputs(features, bounds) @ params.theta)
    return window_from_output(
        features.center, output, features.valid, bounds, params.psi_min, params.psi_max
    )


def ladder(b_min, b_max, n: int) -> np.ndarray:
    """``n`` linearly spaced samples per ray, endpoints reproduced exactly."""
    if n < 2:
        raise ValueError(f"need at least 2 hypotheses, got {n}")
    alpha = np.arange(n, dtype=np.float64) / (n - 1)
    b_min = np.asarray(b_min, dtype=np.float64)[..., None]
    b_max = np.asarray(b_max, dtype=np.float64)[..., None]
    return b_min * (1.0 - alpha) + b_max * alpha


def uniform_hypotheses(bounds: SceneDepthBounds, n: int, shape: tuple[int, int] = (1, 1)) -> np.ndarray:
    """The same ladder over the full range at every pixel, shape ``(H, W, n)``."""
    row = ladder(bounds.b_min, bounds.b_max, n)
    return np.broadcast_to(row, tuple(shape) + (n,)).copy()


def windowed_hypotheses(windows: SearchWindowField, n: int) -> np.ndarray:
    return ladder(windows.b_min, windows.b_max, n)


def full_range_windows(bounds: SceneDepthBounds, shape, valid=None) -> SearchWindowField:
    """A window field spanning the whole range at every pixel (brute-force mode)."""
    half = 0.5 * bounds.range
    valid = np.ones(shape, dtype=bool) if valid is None else valid
    return SearchWindowField(
        center=np.full(shape, bounds.midpoint),
        output=np.ones(shape),
        radius=np.full(shape, half),
        b_min=np.full(shape, bounds.b_min),
        b_max=np.full(shape, bounds.b_max),
        r_min=half,
        r_max=0.0,
        valid=valid,
    )
