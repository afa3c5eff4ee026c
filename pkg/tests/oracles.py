"""Slow, loop-based reference implementations used as test oracles.

They share no code with the library beyond the data containers.
"""

from __future__ import annotations

import math

import numpy as np


def _to_world(cam, u, v, z):
    xc = np.array([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z])
    return cam.rotation.T @ (xc - cam.translation)


def _to_cam(cam, x):
    xc = cam.rotation @ x + cam.translation
    if xc[2] <= 0:
        return None
    return cam.fx * xc[0] / xc[2] + cam.cx, cam.fy * xc[1] / xc[2] + cam.cy, xc[2]


def _nearest(x):
    return int(math.floor(x + 0.5))


def render(src_depth, src_conf, src_cam, dst_cam):
    """Forward splatting with a z-buffer, one source pixel at a time."""
    identical = (
        np.array_equal(src_cam.rotation, dst_cam.rotation)
        and np.array_equal(src_cam.translation, dst_cam.translation)
        and (src_cam.fx, src_cam.fy, src_cam.cx, src_cam.cy, src_cam.width, src_cam.height)
        == (dst_cam.fx, dst_cam.fy, dst_cam.cx, dst_cam.cy, dst_cam.width, dst_cam.height)
    )
    out_d = np.full(dst_cam.shape, np.nan)
    out_c = np.full(dst_cam.shape, np.nan)
    for r in range(src_cam.height):
        for c in range(src_cam.width):
            z = src_depth[r, c]
            if not np.isfinite(z):
                continue
            if identical:
                iu, iv, zd = c, r, z
            else:
                hit = _to_cam(dst_cam, _to_world(src_cam, c, r, z))
                if hit is None:
                    continue
                iu, iv, zd = _nearest(hit[0]), _nearest(hit[1]), hit[2]
            if 0 <= iu < dst_cam.width and 0 <= iv < dst_cam.height:
                if not np.isfinite(out_d[iv, iu]) or zd < out_d[iv, iu]:
                    out_d[iv, iu] = zd
                    out_c[iv, iu] = src_conf[r, c]
    return out_d, out_c


def sigmoid(x):
    x = max(-500.0, min(500.0, x))
    return 1.0 / (1.0 + math.exp(-x))


def constraint_volume(views, ref_cam, hyps, b_min, b_max, bounds, gamma_sigma, gamma_lambda):
    """Support, occlusion and free-space responses by explicit loops over pixels, samples and views.

    ``views`` is a list of ``(depth, conf, cam)``; the reference is ``ref_cam``.
    Returns ``(H, W, M, 3)``.
    """
    h, w, m = hyps.shape
    rng_ = bounds[1] - bounds[0]
    rendered = [render(d, c, cam, ref_cam) for d, c, cam in views]
    out = np.zeros((h, w, m, 3))
    for r in range(h):
        for c in range(w):
            width = b_max[r, c] - b_min[r, c]
            sig = gamma_sigma * width / (m * rng_)
            lam = gamma_lambda * m * rng_ / width
            for q in range(m):
                s = hyps[r, c, q]
                sup = occ = 0.0
                k = 0
                for rd, rc in rendered:
                    d = rd[r, c]
                    if not np.isfinite(d):
                        continue
                    k += 1
                    sup += rc[r, c] * math.exp(-((s - d) ** 2) / (2 * sig**2))
                    occ += rc[r, c] * sigmoid(lam * (s - d))
                if k:
                    out[r, c, q, 0] = sup / k
                    out[r, c, q, 1] = occ / k
                fsv = 0.0
                kf = 0
                for d_map, c_map, cam in views:
                    if cam is ref_cam or _same(cam, ref_cam):
                        hit = (float(c), float(r), s)
                    else:
                        hit = _to_cam(cam, _to_world(ref_cam, c, r, s))
                    if hit is None:
                        continue
                    iu, iv = _nearest(hit[0]), _nearest(hit[1])
                    if not (0 <= iu < cam.width and 0 <= iv < cam.height):
                        continue
                    d_src = d_map[iv, iu]
                    if not np.isfinite(d_src):
                        continue
                    kf += 1
                    fsv += c_map[iv, iu] * sigmoid(lam * (d_src - hit[2]))
                if kf:
                    out[r, c, q, 2] = fsv / kf
    return out


def _same(a, b):
    return (
        np.array_equal(a.rotation, b.rotation)
        and np.array_equal(a.translation, b.translation)
        and (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (b.fx, b.fy, b.cx, b.cy, b.width, b.height)
    )
