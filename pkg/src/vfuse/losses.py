"""Training objectives, gradient checking, and parameter fitting.

Depth, coverage and radius losses are sums over the valid ground-truth pixels.
Callers that want means divide by the reported pixel counts; :func:`fit` does so
per reference view before averaging over views.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pipeline import (
    IDX_GAMMA_LAMBDA,
    IDX_GAMMA_SIGMA,
    IDX_TEMPERATURE,
    N_PARAMS,
    PARAM_NAMES,
    FusionParams,
    ReferenceInputs,
    backward,
    forward,
)
from .swe import SearchWindowField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    depth: float = 0.5
    coverage: float = 20.0
    radius: float = 0.5

    def __post_init__(self):
        for name in ("depth", "coverage", "radius"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"loss weight {name} must be finite and non-negative")

    def to_dict(self) -> dict:
        return {"depth": self.depth, "coverage": self.coverage, "radius": self.radius}


def valid_mask(gt: np.ndarray) -> np.ndarray:
    return np.isfinite(gt)


def _mask(gt, mask):
    return valid_mask(gt) if mask is None else (mask & valid_mask(gt))


def depth_loss(fused: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, int]:
    """Sum of absolute depth errors and the number of pixels summed.

    Pixels without a fused estimate are skipped.
    """
    m = _mask(gt, mask) & np.isfinite(fused)
    count = int(m.sum())
    if count == 0:
        return 0.0, 0
    return float(np.sum(np.abs(fused[m] - gt[m]))), count


def coverage_terms(windows: SearchWindowField, gt: np.ndarray) -> np.ndarray:
    """Per-pixel ``|center - gt| / R``; below 1 exactly when gt lies inside the window."""
    with np.errstate(invalid="ignore"):
        return np.abs(windows.center - gt) / windows.radius


def coverage_loss(windows: SearchWindowField, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    m = _mask(gt, mask)
    return float(np.sum(coverage_terms(windows, gt)[m]))


def radius_loss(windows: SearchWindowField, mask: np.ndarray) -> float:
    return float(np.sum(windows.radius[mask]))


def total_loss(l_depth: float, l_coverage: float, l_radius: float, weights: LossWeights) -> float:
    return weights.depth * l_depth + weights.coverage * l_coverage + weights.radius * l_radius


def window_coverage(windows: SearchWindowField, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Fraction of valid pixels whose ground truth lies strictly inside the window."""
    m = _mask(gt, mask)
    if not m.any():
        return float("nan")
    inside = (windows.b_min[m] < gt[m]) & (gt[m] < windows.b_max[m])
    return float(inside.mean())


@dataclass
class LossEvaluation:
    l_depth: float
    l_coverage: float
    l_radius: float
    total: float
    n_depth: int
    n_mask: int
    grad: np.ndarray
    grad_terms: np.ndarray  # (3, N_PARAMS): depth, coverage, radius, before weighting


def loss_and_gradient(
    inputs: ReferenceInputs,
    params: FusionParams,
    gt: np.ndarray,
    weights: LossWeights,
    normalize: bool = False,
) -> LossEvaluation:
    """Weighted total loss on one reference view and its analytic gradient."""
    fwd = forward(inputs, params)
    mask = valid_mask(gt)
    win = fwd.windows
    l_d, n_d = depth_loss(fwd.depth, gt, mask)
    l_c = coverage_loss(win, gt, mask)
    l_r = radius_loss(win, mask)
    n_m = int(mask.sum())
    sd = 1.0 / max(n_d, 1) if normalize else 1.0
    sm = 1.0 / max(n_m, 1) if normalize else 1.0
    l_d, l_c, l_r = l_d * sd, l_c * sm, l_r * sm

    dmask = mask & np.isfinite(fwd.depth)
    g_depth = np.where(dmask, np.sign(np.nan_to_num(fwd.depth - gt)), 0.0) * sd
    g_d = backward(inputs, params, fwd, g_depth)
    terms = [g_d]
    if inputs.mode == "brute-force":
        terms += [np.zeros(N_PARAMS), np.zeros(N_PARAMS)]
    else:
        cov = np.where(mask, -np.abs(np.nan_to_num(win.center - gt)) / win.radius**2, 0.0) * sm
        terms.append(_radius_only_gradient(inputs, params, fwd, cov))
        terms.append(_radius_only_gradient(inputs, params, fwd, np.where(mask, sm, 0.0)))
    grad_terms = np.stack(terms)
    w = np.array([weights.depth, weights.coverage, weights.radius])
    return LossEvaluation(
        l_depth=l_d,
        l_coverage=l_c,
        l_radius=l_r,
        total=total_loss(l_d, l_c, l_r, weights),
        n_depth=n_d,
        n_mask=n_m,
        grad=w @ grad_terms,
        grad_terms=grad_terms,
    )


def _radius_only_gradient(inputs, params, fwd, grad_radius):
    """Gradient of a loss that depends on the parameters only through R."""
    win = fwd.windows
    out = win.output
    g_z = np.where(inputs.features.valid, grad_radius * win.r_max * out * (1.0 - out), 0.0)
    grad = np.zeros(N_PARAMS)
    grad[:5] = np.einsum("hw,hwk->k", g_z, inputs.design)
    return grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    numeric: np.ndarray
    reference: np.ndarray
    finite: bool


def grad_check(
    f: Callable[[np.ndarray], float],
    x0,
    eps: float = 1e-6,
    grad: np.ndarray | None = None,
    floor: float = 1e-10,
) -> GradCheckResult:
    """Compare central differences against ``grad`` (or a half-step estimate).

    Steps are ``eps * max(1, |x_i|)``. The relative error per coordinate is
    ``|numeric - reference| / max(|numeric|, |reference|, floor)``.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)

    def central(scale):
        g = np.empty_like(x0)
        for i in range(x0.size):
            h = scale * max(1.0, abs(x0[i]))
            xp = x0.copy()
            xm = x0.copy()
            xp[i] += h
            xm[i] -= h
            g[i] = (f(xp) - f(xm)) / (2.0 * h)
        return g

    numeric = central(eps)
    reference = np.asarray(grad, dtype=np.float64).reshape(-1) if grad is not None else central(eps / 2)
    finite = bool(np.all(np.isfinite(numeric)) and np.all(np.isfinite(reference)))
    if not finite:
        return GradCheckResult(math.inf, numeric, reference, False)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(reference)), floor)
    rel = np.abs(numeric - reference) / denom
    return GradCheckResult(float(rel.max()) if rel.size else 0.0, numeric, reference, True)


# -- fitting -----------------------------------------------------------------

_LOG_PARAMS = (IDX_GAMMA_SIGMA, IDX_GAMMA_LAMBDA, IDX_TEMPERATURE)
OPTIMIZERS = ("adam", "gd")


@dataclass(frozen=True)
class FitSchedule:
    epochs: int = 60
    learning_rate: float = 0.05
    decay: float = 0.95
    decay_every: int = 2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    freeze: tuple[str, ...] = ()

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning rate must be non-negative")
        if self.decay_every < 1 or not 0 < self.decay <= 1:
            raise ValueError("need decay in (0, 1] and decay_every >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        unknown = set(self.freeze) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown parameters to freeze: {sorted(unknown)}")


@dataclass
class FitResult:
    params: FusionParams
    trace: list[dict] = field(default_factory=list)
    diverged: bool = False


def _to_free(x):
    u = x.copy()
    u[list(_LOG_PARAMS)] = np.log(x[list(_LOG_PARAMS)])
    return u


def _from_free(u):
    x = u.copy()
    x[list(_LOG_PARAMS)] = np.exp(u[list(_LOG_PARAMS)])
    return x


def evaluate_batch(
    batch: Sequence[tuple[ReferenceInputs, np.ndarray]], params: FusionParams, weights: LossWeights
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean normalised losses ``(L_d, L_c, L_r, L)``, gradient, and per-term gradients."""
    losses = np.zeros(4)
    grad = np.zeros(N_PARAMS)
    terms = np.zeros((3, N_PARAMS))
    for inputs, gt in batch:
        ev = loss_and_gradient(inputs, params, gt, weights, normalize=True)
        losses += [ev.l_depth, ev.l_coverage, ev.l_radius, ev.total]
        grad += ev.grad
        terms += ev.grad_terms
    n = max(len(batch), 1)
    return losses / n, grad / n, terms / n


def fit(
    batch: Sequence[tuple[ReferenceInputs, np.ndarray]],
    initial: FusionParams,
    schedule: FitSchedule = FitSchedule(),
    weights: LossWeights = LossWeights(),
) -> FitResult:
    """Fit the window predictor, constraint sharpness and aggregator.

    The default optimiser is Adam; ``optimizer="gd"`` takes plain gradient
    steps. Positive parameters are updated in log space. The step size decays by
    ``schedule.decay`` every ``schedule.decay_every`` epochs. Each epoch is one
    full-batch step. The returned parameters are the best seen; the trace holds
    per-epoch losses, the running best, and per-term gradient norms. A
    non-finite loss stops the run and keeps the last finite best.
    """
    if not batch:
        raise ValueError("fit needs at least one reference view with ground truth")
    frozen = np.array([name in schedule.freeze for name in PARAM_NAMES])
    x = initial.to_vector()
    u = _to_free(x)
    m1 = np.zeros(N_PARAMS)
    m2 = np.zeros(N_PARAMS)
    best_loss = math.inf
    best_x = x.copy()
    result = FitResult(initial)

    for epoch in range(schedule.epochs + 1):
        try:
            params = initial.with_vector(x)
            losses, grad, terms = evaluate_batch(batch, params, weights)
        except ValueError:
            # Overflowing steps produce parameters outside their valid range.
            losses = np.full(4, np.nan)
        if not (np.all(np.isfinite(losses)) and np.all(np.isfinite(grad))):
            log.warning("fit diverged at epoch %d; keeping best finite parameters", epoch)
            result.diverged = True
            break
        if losses[3] < best_loss:
            best_loss = float(losses[3])
            best_x = x.copy()
        row = {
            "epoch": epoch,
            "L_d": float(losses[0]),
            "L_c": float(losses[1]),
            "L_r": float(losses[2]),
            "L": float(losses[3]),
            "best": best_loss,
            "grad_norm_d": float(np.linalg.norm(terms[0])),
            "grad_norm_c": float(np.linalg.norm(terms[1])),
            "grad_norm_r": float(np.linalg.norm(terms[2])),
        }
        result.trace.append(row)
        if epoch == schedule.epochs:
            break
        g_free = grad.copy()
        g_free[list(_LOG_PARAMS)] *= x[list(_LOG_PARAMS)]
        g_free[frozen] = 0.0
        lr = schedule.learning_rate * schedule.decay ** (epoch // schedule.decay_every)
        if schedule.optimizer == "gd":
            step = lr * g_free
        else:
            t = epoch + 1
            m1 = schedule.beta1 * m1 + (1 - schedule.beta1) * g_free
            m2 = schedule.beta2 * m2 + (1 - schedule.beta2) * g_free**2
            step = lr * (m1 / (1 - schedule.beta1**t)) / (np.sqrt(m2 / (1 - schedule.beta2**t)) + 1e-8)
        step[frozen] = 0.0
        u = u - step
        with np.errstate(over="ignore", invalid="ignore"):
            x = _from_free(u)
        x[frozen] = initial.to_vector()[frozen]

    result.params = initial.with_vector(best_x)
    return result
