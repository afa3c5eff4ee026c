"""Pipeline configuration: one JSON document, overridable field by field.

Every section is optional in a config file; missing fields take the defaults
below. Overrides use dotted paths (``params.aggregator.temperature=0.5``) with JSON
values.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .evalbench.cloud import FilterParams
from .evalbench.scenes import SyntheticSceneSpec
from .io import DataError
from .losses import FitSchedule, LossWeights
from .pipeline import MODES, FusionParams
from .swe import CenterStrategy


@dataclass
class PipelineConfig:
    seed: int = 0
    mode: str = "vcv"
    n_views: int = 5
    n_hyp: int = 8
    n_hyp_brute_force: int = 128
    center_strategy: str = CenterStrategy.MOST_CONFIDENT.value
    params: FusionParams = field(default_factory=FusionParams)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    fit: FitSchedule = field(default_factory=FitSchedule)
    filter: FilterParams = field(default_factory=FilterParams)
    scene: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    # Synthetic scenes have no benchmark thresholds. These are in scene units and
    # bracket the default input noise (std 6 on a range of 600).
    inlier_thresholds: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    auc_steps: int = 20
    chamfer_tau: float = 2.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_views < 1:
            raise ValueError("n_views must be at least 1")
        if self.n_hyp < 2 or self.n_hyp_brute_force < 2:
            raise ValueError("n_hyp and n_hyp_brute_force must be at least 2")
        CenterStrategy(self.center_strategy)
        if self.auc_steps < 2:
            raise ValueError("auc_steps must be at least 2")
        if not self.chamfer_tau > 0:
            raise ValueError("chamfer_tau must be positive")
        self.inlier_thresholds = tuple(float(t) for t in self.inlier_thresholds)

    @property
    def effective_n_hyp(self) -> int:
        """Hypotheses per pixel: brute force sweeps its own, denser plane count."""
        return self.n_hyp_brute_force if self.mode == "brute-force" else self.n_hyp

    def to_dict(self) -> dict:
        sched = self.fit
        return {
            "seed": self.seed,
            "mode": self.mode,
            "n_views": self.n_views,
            "n_hyp": self.n_hyp,
            "n_hyp_brute_force": self.n_hyp_brute_force,
            "center_strategy": self.center_strategy,
            "params": self.params.to_dict(),
            "loss_weights": self.loss_weights.to_dict(),
            "fit": {
                "epochs": sched.epochs,
                "learning_rate": sched.learning_rate,
                "decay": sched.decay,
                "decay_every": sched.decay_every,
                "optimizer": sched.optimizer,
                "beta1": sched.beta1,
                "beta2": sched.beta2,
                "freeze": list(sched.freeze),
            },
            "filter": self.filter.to_dict(),
            "scene": {k: v for k, v in self.scene.to_dict().items() if k != "seed"},
            "inlier_thresholds": list(self.inlier_thresholds),
            "auc_steps": self.auc_steps,
            "chamfer_tau": self.chamfer_tau,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d = dict(data)
        seed = int(d.get("seed", 0))
        kwargs = {k: d[k] for k in ("mode", "n_views", "n_hyp", "n_hyp_brute_force", "center_strategy", "auc_steps", "chamfer_tau") if k in d}
        if "inlier_thresholds" in d:
            kwargs["inlier_thresholds"] = tuple(d["inlier_thresholds"])
        if "params" in d:
            kwargs["params"] = FusionParams.from_dict(d["params"])
        if "loss_weights" in d:
            kwargs["loss_weights"] = LossWeights(**d["loss_weights"])
        if "fit" in d:
            f = dict(d["fit"])
            if "freeze" in f:
                f["freeze"] = tuple(f["freeze"])
            kwargs["fit"] = FitSchedule(**f)
        if "filter" in d:
            kwargs["filter"] = FilterParams(**d["filter"])
        scene = dict(d.get("scene", {}))
        scene["seed"] = seed
        kwargs["scene"] = SyntheticSceneSpec.from_dict(scene)
        return cls(seed=seed, **kwargs)


def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``key.path=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ValueError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the JSON file at ``path``, then dotted ``overrides``."""
    data = PipelineConfig().to_dict()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"missing config file {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(user, dict):
            raise DataError(f"{path}: config must be a JSON object")
        data = _merge(data, user)
    for key, value in (overrides or {}).items():
        _set_path(data, key, value)
    return PipelineConfig.from_dict(data)


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out
