"""Shared test helpers: small cameras, random scenes, and view builders."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vfuse.geometry import CameraModel, View


def simple_cam(width=4, height=4, f=4.0, translation=(0.0, 0.0, 0.0), rotation=None):
    return CameraModel(
        fx=f,
        fy=f,
        cx=(width - 1) / 2,
        cy=(height - 1) / 2,
        rotation=np.eye(3) if rotation is None else rotation,
        translation=translation,
        width=width,
        height=height,
    )


def random_cam(rng, width=6, height=5, max_angle=0.15, max_shift=0.3):
    """A camera near the identity pose looking down +z."""
    rot = Rotation.from_rotvec(rng.uniform(-max_angle, max_angle, 3)).as_matrix()
    return CameraModel(
        fx=rng.uniform(3, 8),
        fy=rng.uniform(3, 8),
        cx=rng.uniform(0, width - 1),
        cy=rng.uniform(0, height - 1),
        rotation=rot,
        translation=rng.uniform(-max_shift, max_shift, 3),
        width=width,
        height=height,
    )


def random_view(rng, cam, lo=4.0, hi=8.0, invalid_frac=0.1, view_id=0):
    depth = rng.uniform(lo, hi, cam.shape)
    depth[rng.random(cam.shape) < invalid_frac] = np.nan
    conf = np.where(np.isfinite(depth), rng.uniform(0, 1, cam.shape), np.nan)
    return View(depth, conf, cam, view_id=view_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria append one line each; printed after the run.
ACCEPTANCE: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    print(ACCEPTANCE[-1])
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
