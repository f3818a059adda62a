"""Differentiable forward warping through a displaced triangle lattice.

Each lattice vertex (a source pixel center) is moved by its flow vector and
the deformed triangles are rasterized at target pixel centers.  A covered
pixel takes the barycentric blend of its triangle's three source
intensities.  When several triangles cover a pixel the one with the largest
mean vertex displacement is in front; ties go to the lower triangle index.
"""

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .core import (DEGENERATE_AREA, EDGE_EPS, Fragment, ShapeError, as_flow,
                   as_image, build_lattice, check_same_grid)


@lru_cache(maxsize=32)
def lattice_for(width, height):
    return build_lattice(width, height)


@numba.njit(cache=True, nogil=True)
def _rasterize(pos, tris, motion, width, height):
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    depth = np.full((height, width), -1.0)
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = pos[i0, 0], pos[i0, 1]
        x1, y1 = pos[i1, 0], pos[i1, 1]
        x2, y2 = pos[i2, 0], pos[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < DEGENERATE_AREA:
            continue
        xmin = max(0, int(np.ceil(min(x0, x1, x2) - 1e-6)))
        xmax = min(width - 1, int(np.floor(max(x0, x1, x2) + 1e-6)))
        ymin = max(0, int(np.ceil(min(y0, y1, y2) - 1e-6)))
        ymax = min(height - 1, int(np.floor(max(y0, y1, y2) + 1e-6)))
        m = motion[t]
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                w1 = ((px - x0) * (y2 - y0) - (x2 - x0) * (py - y0)) / area
                w2 = ((x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)) / area
                if w0 < -EDGE_EPS or w1 < -EDGE_EPS or w2 < -EDGE_EPS:
                    continue
                # Strict comparison: triangles arrive in index order, so an
                # equal-motion later triangle never displaces an earlier one.
                if tri_id[py, px] < 0 or m > depth[py, px]:
                    tri_id[py, px] = t
                    depth[py, px] = m
                    bary[py, px, 0] = w0
                    bary[py, px, 1] = w1
                    bary[py, px, 2] = w2
    return tri_id, bary


def triangle_motion(flow, lattice):
    """Mean displacement magnitude of each triangle's three vertices."""
    mag = np.hypot(flow[..., 0], flow[..., 1]).ravel()
    return mag[lattice.triangles].mean(axis=1)


def motion_magnitude(flow, triangle, lattice):
    flow = as_flow(flow)
    idx = lattice.triangles[triangle]
    mag = np.hypot(flow[..., 0], flow[..., 1]).ravel()[idx]
    return float(mag.sum() / 3.0)


@dataclass
class ForwardWarpResult:
    """Warped frame plus the per-pixel winning fragments.

    ``triangle_id`` is -1 at holes; ``barycentric`` is zero there.
    """

    image: np.ndarray
    coverage: np.ndarray
    triangle_id: np.ndarray
    barycentric: np.ndarray
    motion: np.ndarray
    lattice: object

    def fragment(self, x, y):
        t = int(self.triangle_id[y, x])
        if t < 0:
            return None
        return Fragment((x, y), t, tuple(float(w) for w in self.barycentric[y, x]),
                        float(self.motion[t]))


def rasterize(flow, lattice=None):
    """Fragment assignment for a flow field: ``(triangle_id, barycentric, motion)``."""
    h, w = flow.shape[:2]
    lattice = lattice or lattice_for(w, h)
    pos = lattice.vertices + flow.reshape(-1, 2)
    motion = triangle_motion(flow, lattice)
    tri_id, bary = _rasterize(pos, lattice.triangles, motion, w, h)
    return tri_id, bary, motion


def forward_warp(src, flow):
    """Forward-warp ``src`` by ``flow`` through the triangle lattice."""
    src = as_image(src, "src")
    flow = as_flow(flow)
    check_same_grid(src, flow, names=("src", "flow"))
    h, w, c = src.shape
    lattice = lattice_for(w, h)
    tri_id, bary, motion = rasterize(flow, lattice)

    covered = tri_id >= 0
    out = np.zeros_like(src)
    verts = lattice.triangles[tri_id[covered]]
    flat = src.reshape(-1, c)
    wts = bary[covered]
    out[covered] = (wts[:, 0, None] * flat[verts[:, 0]]
                    + wts[:, 1, None] * flat[verts[:, 1]]
                    + wts[:, 2, None] * flat[verts[:, 2]])
    return ForwardWarpResult(out, covered.astype(np.float64), tri_id, bary,
                             motion, lattice)


def forward_warp_vjp(src, flow, upstream, result=None):
    """Gradients of ``sum(upstream * forward_warp(src, flow).image)``.

    Fragment assignments are held fixed, so this is the gradient of the
    piecewise-smooth map on the current piece.  Returns ``(grad_src,
    grad_flow)``.
    """
    src = as_image(src, "src")
    flow = as_flow(flow)
    upstream = as_image(upstream, "upstream")
    check_same_grid(src, flow, upstream, names=("src", "flow", "upstream"))
    if upstream.shape != src.shape:
        raise ShapeError(f"upstream {upstream.shape} != src {src.shape}")
    if result is None:
        result = forward_warp(src, flow)
    h, w, c = src.shape
    n = h * w
    lattice = result.lattice
    covered = result.triangle_id >= 0
    ys, xs = np.nonzero(covered)
    verts = lattice.triangles[result.triangle_id[covered]]
    wts = result.barycentric[covered]
    g = upstream[covered]
    flat = src.reshape(-1, c)

    grad_src = np.zeros((n, c))
    for k in range(3):
        for ch in range(c):
            grad_src[:, ch] += np.bincount(verts[:, k], weights=wts[:, k] * g[:, ch],
                                           minlength=n)

    # s_k: upstream-weighted intensity of vertex k; the output is sum_k w_k s_k.
    s = np.stack([(flat[verts[:, k]] * g).sum(axis=1) for k in range(3)], axis=1)
    val = (wts * s).sum(axis=1)
    t = s - val[:, None]
    pos = lattice.vertices + flow.reshape(-1, 2)
    p = np.stack([xs, ys], axis=1).astype(np.float64)
    d = pos[verts] - p[:, None, :]
    area = ((d[:, 1, 0] - d[:, 0, 0]) * (d[:, 2, 1] - d[:, 0, 1])
            - (d[:, 2, 0] - d[:, 0, 0]) * (d[:, 1, 1] - d[:, 0, 1]))
    dx, dy = d[..., 0], d[..., 1]
    t0, t1, t2 = t[:, 0], t[:, 1], t[:, 2]
    gp = np.empty((len(t), 3, 2))
    gp[:, 0, 0] = -t1 * dy[:, 2] + t2 * dy[:, 1]
    gp[:, 0, 1] = t1 * dx[:, 2] - t2 * dx[:, 1]
    gp[:, 1, 0] = t0 * dy[:, 2] - t2 * dy[:, 0]
    gp[:, 1, 1] = -t0 * dx[:, 2] + t2 * dx[:, 0]
    gp[:, 2, 0] = -t0 * dy[:, 1] + t1 * dy[:, 0]
    gp[:, 2, 1] = t0 * dx[:, 1] - t1 * dx[:, 0]
    gp /= area[:, None, None]

    grad_flow = np.zeros((n, 2))
    for k in range(3):
        for comp in range(2):
            grad_flow[:, comp] += np.bincount(verts[:, k], weights=gp[:, k, comp],
                                              minlength=n)
    return grad_src.reshape(h, w, c), grad_flow.reshape(h, w, 2)
