import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cam, random_view, simple_cam
from vfuse.geometry import (
    CameraModel,
    RenderedViewSet,
    View,
    project,
    render_all_into_reference,
    render_into_view,
    reproject_hypothesis,
    reprojection_error,
    reprojection_error_map,
    unproject,
)
from vfuse.evalbench.scenes import SyntheticSceneSpec, generate_scene


def cam_identity(f=1.0, c=0.0, width=4, height=4):
    return CameraModel(f, f, c, c, np.eye(3), np.zeros(3), width, height)


# -- CameraModel ----------------------------------------------------------------


def test_camera_rejects_bad_intrinsics_and_rotation():
    with pytest.raises(ValueError):
        CameraModel(0.0, 1.0, 0, 0, np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 0, 0, np.eye(3), np.zeros(3), 0, 4)
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 0, 0, np.diag([1.0, 1.0, 1.001]), np.zeros(3), 4, 4)


def test_camera_json_round_trip(rng):
    cam = random_cam(rng)
    back = CameraModel.from_dict(json.loads(json.dumps(cam.to_dict())))
    assert back.same_as(cam)
    assert len(cam.to_dict()["rotation"]) == 9


def test_look_at_points_axis_at_target():
    cam = CameraModel.look_at([3.0, 1.0, -2.0], [0.0, 0.0, 5.0], [0, 1, 0], 10, 10, 5, 5, 11, 11)
    proj = project(cam, [0.0, 0.0, 5.0])
    assert np.allclose(proj.pixel, [5, 5], atol=1e-9)


# -- project / unproject ----------------------------------------------------------


def test_project_principal_ray():
    proj = project(cam_identity(), [0, 0, 5])
    assert np.allclose(proj.pixel, [0, 0]) and proj.depth == 5 and not proj.behind


def test_project_offset_point():
    proj = project(cam_identity(f=100, c=50), [1, 0, 10])
    assert np.allclose(proj.pixel, [60, 50]) and proj.depth == 10


def test_project_behind_camera():
    assert project(cam_identity(), [0, 0, -1]).behind
    assert project(cam_identity(), [1, 0, 0]).behind


def test_unproject_principal_pixel():
    assert np.allclose(unproject(cam_identity(), (0, 0), 3.0), [0, 0, 3.0])


def test_unproject_translated_camera():
    cam = CameraModel(2.0, 2.0, 1.5, 1.5, np.eye(3), [0, 0, -1], 4, 4)
    assert np.allclose(unproject(cam, (1.5, 1.5), 1.0), [0, 0, 2.0], atol=1e-15)


def test_unproject_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        unproject(cam_identity(), (0, 0), 0.0)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    u=st.floats(-5, 10),
    v=st.floats(-5, 10),
    d=st.floats(0.1, 100),
)
def test_round_trip_property(seed, u, v, d):
    cam = random_cam(np.random.default_rng(seed))
    proj = project(cam, unproject(cam, (u, v), d))
    assert np.allclose(proj.pixel, [u, v], atol=1e-9)
    assert abs(proj.depth - d) <= 1e-9 * max(1.0, d)
    x = np.random.default_rng(seed).uniform(-1, 1, 3) + [0, 0, 5]
    p = project(cam, x)
    if not p.behind:
        assert np.allclose(unproject(cam, p.pixel, p.depth), x, atol=1e-9)


# -- rendering --------------------------------------------------------------------


def test_render_identity_warp(rng):
    cam = random_cam(rng)
    view = random_view(rng, cam)
    d, c = render_into_view(view.depth, view.confidence, cam, cam)
    np.testing.assert_array_equal(d, view.depth)
    np.testing.assert_array_equal(c, view.confidence)


def brute_force_render(src_depth, src_conf, src_cam, dst_cam):
    """Per-pixel oracle: project each source pixel, keep the nearest splat."""
    out_d = np.full(dst_cam.shape, np.nan)
    out_c = np.full(dst_cam.shape, np.nan)
    for r in range(src_cam.height):
        for col in range(src_cam.width):
            z = src_depth[r, col]
            if not np.isfinite(z):
                continue
            p = project(dst_cam, unproject(src_cam, (col, r), z))
            if p.behind:
                continue
            iu, iv = int(np.floor(p.pixel[0] + 0.5)), int(np.floor(p.pixel[1] + 0.5))
            if 0 <= iu < dst_cam.width and 0 <= iv < dst_cam.height:
                if not np.isfinite(out_d[iv, iu]) or p.depth < out_d[iv, iu]:
                    out_d[iv, iu] = p.depth
                    out_c[iv, iu] = src_conf[r, col]
    return out_d, out_c


def test_render_axial_translation_adds_offset(rng):
    src = simple_cam(8, 8, f=6.0)
    t = 0.7
    dst = simple_cam(8, 8, f=6.0, translation=(0, 0, t))
    view = random_view(rng, src, invalid_frac=0.0)
    d, c = render_into_view(view.depth, view.confidence, src, dst)
    ref_d, ref_c = brute_force_render(view.depth, view.confidence, src, dst)
    np.testing.assert_allclose(d, ref_d, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(np.isnan(c), np.isnan(ref_c))
    ok = np.isfinite(ref_c)
    np.testing.assert_array_equal(c[ok], ref_c[ok])
    # Every splat depth is the source depth plus t.
    vals = d[np.isfinite(d)]
    src_vals = set(np.round(view.depth.ravel() + t, 12))
    assert all(np.round(v, 12) in src_vals for v in vals)


def test_render_random_cameras_match_oracle(rng):
    for _ in range(10):
        src = random_cam(rng)
        dst = random_cam(rng)
        view = random_view(rng, src)
        d, c = render_into_view(view.depth, view.confidence, src, dst)
        ref_d, ref_c = brute_force_render(view.depth, view.confidence, src, dst)
        np.testing.assert_allclose(d, ref_d, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(np.isnan(d), np.isnan(ref_d))


def test_render_z_buffer_keeps_nearest():
    # Two source pixels on the same ray of a camera far away collapse to one pixel.
    src = cam_identity(f=1.0, c=0.0, width=2, height=1)
    dst = CameraModel(1e-3, 1e-3, 0.0, 0.0, np.eye(3), np.zeros(3), 1, 1)
    depth = np.array([[4.0, 6.0]])
    conf = np.array([[0.3, 0.9]])
    d, c = render_into_view(depth, conf, src, dst)
    assert d[0, 0] == 4.0 and c[0, 0] == 0.3


def test_render_all_counts():
    cam = simple_cam()
    depth = np.full(cam.shape, 5.0)
    depth[0, 0] = np.nan
    conf = np.where(np.isfinite(depth), 0.5, np.nan)
    views = [View(depth, conf, cam)] * 5
    rs = render_all_into_reference(views, cam)
    assert rs.n_views == 5
    assert rs.valid_count[0, 0] == 0 and np.all(rs.valid_count.ravel()[1:] == 5)
    one = render_all_into_reference(views[:1], cam)
    np.testing.assert_array_equal(one.valid_count, np.isfinite(depth).astype(int))


def test_render_missing_frustum_contributes_nothing():
    ref = simple_cam()
    away = CameraModel(4.0, 4.0, 1.5, 1.5, np.diag([-1.0, 1.0, -1.0]), np.zeros(3), 4, 4)
    views = [View(np.full((4, 4), 5.0), np.full((4, 4), 1.0), away)]
    rs = render_all_into_reference(views, ref)
    assert np.all(rs.valid_count == 0)


def test_rendered_view_set_recounts(rng):
    d = rng.uniform(1, 2, (3, 4, 5))
    d[rng.random(d.shape) < 0.3] = np.nan
    rs = RenderedViewSet(d, np.where(np.isfinite(d), 0.5, np.nan))
    np.testing.assert_array_equal(rs.valid_count, np.isfinite(d).sum(axis=0))
    assert rs.valid_count.max() <= 3


# -- reprojection -------------------------------------------------------------------


def test_reproject_hypothesis_identity_and_axial():
    cam = simple_cam()
    r = reproject_hypothesis(cam, cam, (1.0, 2.0), 3.0)
    assert r.ok and np.allclose(r.pixel, [1, 2]) and r.depth == 3.0
    shifted = simple_cam(translation=(0, 0, 0.5))
    r = reproject_hypothesis(cam, shifted, (1.5, 1.5), 3.0)
    assert r.ok and abs(r.depth - 3.5) < 1e-12


def test_reproject_hypothesis_behind_and_outside():
    cam = simple_cam()
    behind = simple_cam(translation=(0, 0, -10))
    assert reproject_hypothesis(cam, behind, (1.5, 1.5), 3.0).status == "behind-camera"
    side = simple_cam(translation=(5, 0, 0))
    assert reproject_hypothesis(cam, side, (1.5, 1.5), 3.0).status == "out-of-bounds"


def test_reprojection_error_identical_is_zero(rng):
    cam = random_cam(rng)
    view = random_view(rng, cam, invalid_frac=0.0)
    assert reprojection_error(cam, cam, (2, 3), view.depth[3, 2], view.depth) == 0.0
    np.testing.assert_array_equal(reprojection_error_map(cam, view.depth, cam, view.depth), 0.0)


def test_reprojection_error_invalid_source_is_inf():
    cam = simple_cam()
    other = simple_cam(translation=(0.1, 0, 0))
    assert reprojection_error(cam, other, (1, 1), 5.0, np.full((4, 4), np.nan)) == np.inf


def test_reprojection_error_consistent_scene():
    spec = SyntheticSceneSpec(kind="plane", width=40, height=40, noise_frac=0, outlier_frac=0, seed=3)
    scene = generate_scene(spec)
    c0, c1 = scene.cameras[0], scene.cameras[1]
    err = reprojection_error_map(c0, scene.gt_depths[0], c1, scene.gt_depths[1])
    assert np.median(err[np.isfinite(err)]) <= 0.5
    assert np.quantile(err[np.isfinite(err)], 0.95) <= 1.0
    # Scalar and vectorised versions agree.
    for v, u in [(10, 10), (20, 5), (33, 27)]:
        e = reprojection_error(c0, c1, (u, v), scene.gt_depths[0][v, u], scene.gt_depths[1])
        assert e == pytest.approx(err[v, u], abs=1e-9)
