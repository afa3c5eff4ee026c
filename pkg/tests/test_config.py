import json

import pytest

from vfuse.config import PipelineConfig, load_config, parse_override
from vfuse.io import DataError


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.n_views, cfg.n_hyp, cfg.n_hyp_brute_force, cfg.mode) == (5, 8, 128, "vcv")
    assert (cfg.params.window.psi_min, cfg.params.window.psi_max) == (0.005, 0.5)
    lw = cfg.loss_weights
    assert (lw.depth, lw.coverage, lw.radius) == (0.5, 20.0, 0.5)
    agg = cfg.params.aggregator
    assert (agg.w_sup, agg.w_occ, agg.w_fsv, agg.smoothing_radius, agg.temperature) == (1, 1, 1, 1, 1)
    assert (cfg.params.constraint.gamma_sigma, cfg.params.constraint.gamma_lambda) == (1.0, 1.0)
    assert cfg.fit.decay == 0.95 and cfg.fit.decay_every == 2


def test_round_trip():
    cfg = load_config(overrides={"seed": 9, "mode": "brute-force", "params.aggregator.temperature": 0.5})
    again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert cfg.scene.seed == 9 and cfg.effective_n_hyp == 128


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"n_hyp": 16, "scene": {"kind": "plane"}}))
    cfg = load_config(path, {"scene.width": 32})
    assert cfg.n_hyp == 16 and cfg.scene.kind == "plane" and cfg.scene.width == 32
    assert cfg.scene.height == 100


def test_errors(tmp_path):
    with pytest.raises(ValueError):
        load_config(overrides={"bogus": 1})
    with pytest.raises(ValueError):
        load_config(overrides={"mode": "magic"})
    with pytest.raises(ValueError):
        load_config(overrides={"scene.noise_frac": 2})
    with pytest.raises(DataError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(DataError):
        load_config(tmp_path / "bad.json")


def test_parse_override():
    assert parse_override("a.b=0.5") == ("a.b", 0.5)
    assert parse_override("mode=vcv") == ("mode", "vcv")
    assert parse_override("x=[1, 2]") == ("x", [1, 2])
    with pytest.raises(ValueError):
        parse_override("novalue")
