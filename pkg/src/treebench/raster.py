"""Software z-buffer rasterizer for depth rendering.

Triangles are clipped against the near plane in camera space, projected
through the pinhole model, and scan-converted with perspective-correct
(1/z) interpolation.  Pixel centers sit at integer (u, v) coordinates to
match the unprojection convention.  No anti-aliasing: depth edges stay
hard like stereo output.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _raster_kernel(tri_verts, tri_labels, fx, fy, cx, cy, width, height, zbuf, lbuf):
    n_tri = tri_verts.shape[0]
    for t in range(n_tri):
        x0, y0, z0 = tri_verts[t, 0, 0], tri_verts[t, 0, 1], tri_verts[t, 0, 2]
        x1, y1, z1 = tri_verts[t, 1, 0], tri_verts[t, 1, 1], tri_verts[t, 1, 2]
        x2, y2, z2 = tri_verts[t, 2, 0], tri_verts[t, 2, 1], tri_verts[t, 2, 2]

        u0 = fx * x0 / z0 + cx
        v0 = fy * y0 / z0 + cy
        u1 = fx * x1 / z1 + cx
        v1 = fy * y1 / z1 + cy
        u2 = fx * x2 / z2 + cx
        v2 = fy * y2 / z2 + cy

        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area) < 1e-12:
            continue

        umin = min(u0, min(u1, u2))
        umax = max(u0, max(u1, u2))
        vmin = min(v0, min(v1, v2))
        vmax = max(v0, max(v1, v2))
        iu0 = max(0, int(np.ceil(umin)))
        iu1 = min(width - 1, int(np.floor(umax)))
        iv0 = max(0, int(np.ceil(vmin)))
        iv1 = min(height - 1, int(np.floor(vmax)))
        if iu0 > iu1 or iv0 > iv1:
            continue

        inv0 = 1.0 / z0
        inv1 = 1.0 / z1
        inv2 = 1.0 / z2
        inv_area = 1.0 / area
        for iv in range(iv0, iv1 + 1):
            pv = float(iv)
            for iu in range(iu0, iu1 + 1):
                pu = float(iu)
                w0 = ((u1 - pu) * (v2 - pv) - (u2 - pu) * (v1 - pv)) * inv_area
                w1 = ((u2 - pu) * (v0 - pv) - (u0 - pu) * (v2 - pv)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                inv_z = w0 * inv0 + w1 * inv1 + w2 * inv2
                if inv_z <= 0.0:
                    continue
                z = 1.0 / inv_z
                if z < zbuf[iv, iu]:
                    zbuf[iv, iu] = z
                    lbuf[iv, iu] = tri_labels[t]


def _clip_near(tri_cam: np.ndarray, znear: float) -> np.ndarray:
    """Clip camera-space triangles against z >= znear (Sutherland-Hodgman)."""
    z = tri_cam[:, :, 2]
    all_in = np.all(z >= znear, axis=1)
    any_in = np.any(z >= znear, axis=1)
    straddle = any_in & ~all_in
    out = [tri_cam[all_in]]
    for tri in tri_cam[straddle]:
        poly = list(tri)
        clipped = []
        m = len(poly)
        for i in range(m):
            a, b = poly[i], poly[(i + 1) % m]
            ain, bin_ = a[2] >= znear, b[2] >= znear
            if ain:
                clipped.append(a)
            if ain != bin_:
                s = (znear - a[2]) / (b[2] - a[2])
                clipped.append(a + s * (b - a))
        for k in range(1, len(clipped) - 1):
            out.append(np.stack([clipped[0], clipped[k], clipped[k + 1]])[None])
    if not out:
        return np.empty((0, 3, 3))
    return np.concatenate(out, axis=0)


def render_zbuffer(meshes_cam, intr, znear: float = 0.05):
    """Rasterize camera-space meshes into (depth, label) images.

    ``meshes_cam`` is a sequence of (vertices_cam (n,3), triangles (m,3),
    label).  Background pixels hold +inf depth and label -1.
    """
    zbuf = np.full((intr.height, intr.width), np.inf, dtype=np.float64)
    lbuf = np.full((intr.height, intr.width), -1, dtype=np.int32)
    for verts, tris, label in meshes_cam:
        if len(tris) == 0:
            continue
        tri_cam = verts[tris]
        tri_cam = _clip_near(tri_cam, znear)
        if tri_cam.shape[0] == 0:
            continue
        labels = np.full(tri_cam.shape[0], label, dtype=np.int32)
        _raster_kernel(np.ascontiguousarray(tri_cam), labels,
                       float(intr.fx), float(intr.fy), float(intr.cx), float(intr.cy),
                       intr.width, intr.height, zbuf, lbuf)
    return zbuf, lbuf
