import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import simple_cam
from vfuse.fusion import (
    AggregatorParams,
    aggregate,
    aligned_smooth,
    aligned_smooth_adjoint,
    box_smooth,
    conventional_fuse,
    fused_confidence,
    soft_argmax,
)
from vfuse.geometry import RenderedViewSet, View, render_all_into_reference
from vfuse.swe import SceneDepthBounds, full_range_windows, uniform_hypotheses, window_from_output, windowed_hypotheses
from vfuse.vcv import ConstraintParams, ConstraintVolume, build_vcv


def volume(v, k=None, hyps=None):
    v = np.asarray(v, float)
    k = np.ones(v.shape[:2], int) if k is None else k
    return ConstraintVolume(v, k, np.ones(v.shape[:3], int), hyps)


# -- aggregator ---------------------------------------------------------------------


def test_aggregator_validation():
    with pytest.raises(ValueError):
        AggregatorParams(temperature=0.0)
    with pytest.raises(ValueError):
        AggregatorParams(smoothing_radius=-1)
    with pytest.raises(ValueError):
        AggregatorParams(w_occ=np.nan)
    with pytest.raises(ValueError):
        aggregate(volume(np.zeros((2, 2, 3, 3))), AggregatorParams(smoothing_radius=2))


def test_zero_volume_gives_uniform():
    p = aggregate(volume(np.zeros((3, 3, 5, 3))), AggregatorParams())
    np.testing.assert_allclose(p, 0.2, atol=1e-15)


def test_k0_rays_uniform():
    v = np.random.default_rng(0).uniform(0, 1, (2, 2, 4, 3))
    k = np.array([[0, 1], [1, 1]])
    p = aggregate(volume(v, k), AggregatorParams(smoothing_radius=0))
    np.testing.assert_array_equal(p[0, 0], 0.25)


def test_single_view_support_argmax():
    cam = simple_cam(1, 1)
    d0 = 61.7
    view = View(np.array([[d0]]), np.array([[1.0]]), cam)
    b = SceneDepthBounds(0.0, 100.0)
    hyps = uniform_hypotheses(b, 11)
    cv = build_vcv([view], render_all_into_reference([view], cam), hyps, ConstraintParams(20.0, 1.0), full_range_windows(b, (1, 1)), b, cam)
    p = aggregate(cv, AggregatorParams(1.0, 0.0, 0.0, smoothing_radius=0))
    assert np.argmax(p[0, 0]) == np.argmin(np.abs(hyps[0, 0] - d0))


def test_low_temperature_is_nearly_one_hot():
    v = np.zeros((1, 1, 4, 3))
    v[0, 0, :, 0] = [0.1, 0.4, 0.2, 0.3]
    p = aggregate(volume(v), AggregatorParams(1, 0, 0, smoothing_radius=0, temperature=1e-3))
    assert p[0, 0].max() >= 0.999 and np.argmax(p[0, 0]) == 1


def test_probabilities_normalised(rng):
    v = rng.uniform(0, 1, (4, 5, 6, 3))
    p = aggregate(volume(v), AggregatorParams(1.3, 0.7, 0.2, 1, 0.3))
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_shift_invariance(rng):
    v = rng.uniform(0, 1, (3, 3, 5, 3))
    params = AggregatorParams(1.0, 0.5, 2.0, 1, 0.7)
    c = rng.uniform(-1, 1, (3, 3, 1, 1))
    # Equal offsets on every channel with weights summing to w_sup - w_occ - w_fsv shift scores by a per-ray constant.
    shifted = v + c
    p0 = aggregate(volume(v), AggregatorParams(1.0, 0.5, 2.0, 0, 0.7))
    p1 = aggregate(volume(shifted), AggregatorParams(1.0, 0.5, 2.0, 0, 0.7))
    np.testing.assert_allclose(p0, p1, atol=1e-12)
    p0 = aggregate(volume(v), params)
    p1 = aggregate(volume(v + 0.3), params)
    np.testing.assert_allclose(p0, p1, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    occ=st.tuples(st.floats(0, 1), st.floats(0, 1)),
    sup=st.tuples(st.floats(0, 1), st.floats(0, 1)),
    w1=st.floats(0, 5),
    dw=st.floats(0, 5),
)
def test_more_occlusion_weight_never_favours_occluded_sample(occ, sup, w1, dw):
    v = np.zeros((1, 1, 2, 3))
    v[0, 0, :, 0] = sup
    v[0, 0, :, 1] = occ
    if occ[0] == occ[1]:
        return
    hi = int(np.argmax(occ))
    p_a = aggregate(volume(v), AggregatorParams(1.0, w1, 0.0, 0))[0, 0]
    p_b = aggregate(volume(v), AggregatorParams(1.0, w1 + dw, 0.0, 0))[0, 0]
    assert p_b[hi] <= p_a[hi] + 1e-12


# -- depth-aligned smoothing ---------------------------------------------------------------


def test_aligned_smooth_equals_box_on_shared_ladders(rng):
    v = rng.uniform(0, 1, (5, 4, 6, 3))
    hyps = uniform_hypotheses(SceneDepthBounds(1.0, 2.0), 6, (5, 4))
    np.testing.assert_array_equal(aligned_smooth(v, hyps, 1), box_smooth(v, 1))


def test_aligned_smooth_shifted_ladder_interpolates():
    # Two pixels; the right ladder is the left one shifted by half a step.
    v = np.zeros((1, 2, 3, 1))
    v[0, 0, :, 0] = [0.0, 2.0, 4.0]
    h = np.array([[[0.0, 1.0, 2.0], [0.5, 1.5, 2.5]]])
    out = aligned_smooth(v, h, 1)
    # Left pixel sees its own values plus the right (zero) neighbour resampled: mean of two.
    np.testing.assert_allclose(out[0, 0, :, 0], [0.0, 1.0, 2.0])
    # Right pixel: left values resampled at 0.5, 1.5, 2.5 are 1, 3, 4 (held past the end).
    np.testing.assert_allclose(out[0, 1, :, 0], [0.5, 1.5, 2.0])


def test_aligned_smooth_adjoint_dot_product(rng):
    h, w, m = 5, 6, 4
    v = rng.uniform(0, 1, (h, w, m, 3))
    lo = rng.uniform(1, 2, (h, w))
    hyps = windowed_hypotheses(window_from_output(lo, rng.uniform(0, 1, (h, w)), np.ones((h, w), bool), SceneDepthBounds(0.5, 3), 0.05, 0.5), m)
    g = rng.normal(size=v.shape)
    g_vol, g_hyp = aligned_smooth_adjoint(v, hyps, 1, g)
    dv = rng.normal(size=v.shape)
    lhs = np.sum(g * aligned_smooth(dv, hyps, 1))
    assert lhs == pytest.approx(np.sum(g_vol * dv), rel=1e-10)
    # Ladders only ever move through their window bounds, so perturb those.
    eps = 1e-6
    dh = np.zeros_like(hyps)
    dh[2, 3] = np.linspace(*rng.normal(size=2), m) * 0.01
    fd = (np.sum(g * aligned_smooth(v, hyps + eps * dh, 1)) - np.sum(g * aligned_smooth(v, hyps - eps * dh, 1))) / (2 * eps)
    assert fd == pytest.approx(np.sum(g_hyp * dh), rel=1e-5, abs=1e-9)


# -- soft-argmax and confidence ----------------------------------------------------------


def test_soft_argmax_examples():
    s = np.array([[[10.0, 20.0, 30.0]]])
    assert soft_argmax(s, np.array([[[0.0, 1.0, 0.0]]]))[0, 0] == 20.0
    assert soft_argmax(s, np.full((1, 1, 3), 1 / 3))[0, 0] == pytest.approx(20.0, abs=1e-12)
    s2 = np.array([[[10.0, 20.0]]])
    assert soft_argmax(s2, np.array([[[0.25, 0.75]]]))[0, 0] == 17.5
    assert np.isnan(soft_argmax(s2, np.array([[[0.5, 0.5]]]), np.array([[False]]))[0, 0])


def test_fused_confidence_examples():
    b = SceneDepthBounds(0.0, 100.0)
    out = np.array([[0.0, 1.0, 0.25, 0.5]])
    valid = np.array([[True, True, True, False]])
    w = window_from_output(np.full((1, 4), 50.0), out, valid, b, 0.005, 0.5)
    np.testing.assert_allclose(fused_confidence(w), [[1.0, 0.0, 0.75, 0.0]], atol=1e-15)


# -- conventional baseline ---------------------------------------------------------------


def conventional(depths, confs, b=SceneDepthBounds(0.0, 100.0)):
    cam = simple_cam(1, 1)
    views = [View(np.array([[d]]), np.array([[c]]), cam, i) for i, (d, c) in enumerate(zip(depths, confs))]
    rs = render_all_into_reference(views, cam)
    return conventional_fuse(rs, views, cam, ConstraintParams(8.0, 1.0), b, 8)


def test_conventional_agreeing_views_win():
    out = conventional([50.0, 50.2, 49.9, 90.0], [0.9, 0.8, 0.9, 0.9])
    assert out.depth[0, 0] in (50.0, 50.2, 49.9)


def test_conventional_single_view_and_ties():
    out = conventional([42.0], [0.7])
    assert out.depth[0, 0] == 42.0
    out = conventional([42.0, 42.0, 42.0], [0.5, 0.5, 0.5])
    assert out.depth[0, 0] == 42.0
    assert 0 <= out.confidence[0, 0] <= 1


def test_conventional_k0_is_sentinel():
    cam = simple_cam(1, 1)
    views = [View(np.array([[np.nan]]), np.array([[np.nan]]), cam)]
    out = conventional_fuse(render_all_into_reference(views, cam), views, cam, ConstraintParams(), SceneDepthBounds(1, 2))
    assert np.isnan(out.depth[0, 0]) and np.isnan(out.confidence[0, 0])
