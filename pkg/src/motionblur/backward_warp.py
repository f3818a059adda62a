"""Bilinear backward warping: ``out(x) = src(x + flow(x))``.

Samples falling outside ``[0, W-1] x [0, H-1]`` are marked invalid and
produce zero, rather than being clamped to the border.
"""

import numpy as np

from .core import ShapeError, as_flow, as_image, check_same_grid


def _sample_coords(flow):
    h, w = flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    # Right-continuous cell choice; the far border reuses the last cell with
    # fraction 1 so that zero flow is valid everywhere.
    x0 = np.clip(np.floor(sx), 0, w - 2).astype(np.int64)
    y0 = np.clip(np.floor(sy), 0, h - 2).astype(np.int64)
    fx = np.where(valid, sx - x0, 0.0)
    fy = np.where(valid, sy - y0, 0.0)
    return x0, y0, fx, fy, valid


def backward_warp(src, flow):
    """Return ``(warped, valid)``; invalid pixels are 0 in ``warped``."""
    src = as_image(src, "src")
    flow = as_flow(flow)
    check_same_grid(src, flow, names=("src", "flow"))
    x0, y0, fx, fy, valid = _sample_coords(flow)
    fx = fx[..., None]
    fy = fy[..., None]
    out = ((1 - fx) * (1 - fy) * src[y0, x0]
           + fx * (1 - fy) * src[y0, x0 + 1]
           + (1 - fx) * fy * src[y0 + 1, x0]
           + fx * fy * src[y0 + 1, x0 + 1])
    out[~valid] = 0.0
    return out, valid.astype(np.float64)


def backward_warp_vjp(src, flow, upstream):
    """Gradients of ``sum(upstream * backward_warp(src, flow)[0])``."""
    src = as_image(src, "src")
    flow = as_flow(flow)
    upstream = as_image(upstream, "upstream")
    check_same_grid(src, flow, upstream, names=("src", "flow", "upstream"))
    if upstream.shape != src.shape:
        raise ShapeError(f"upstream {upstream.shape} != src {src.shape}")
    h, w, c = src.shape
    x0, y0, fx, fy, valid = _sample_coords(flow)
    g = np.where(valid[..., None], upstream, 0.0)

    corners = [
        (y0, x0, (1 - fx) * (1 - fy)),
        (y0, x0 + 1, fx * (1 - fy)),
        (y0 + 1, x0, (1 - fx) * fy),
        (y0 + 1, x0 + 1, fx * fy),
    ]
    grad_src = np.zeros((h * w, c))
    for yy, xx, wt in corners:
        idx = (yy * w + xx).ravel()
        for ch in range(c):
            grad_src[:, ch] += np.bincount(idx, weights=(wt * g[..., ch]).ravel(),
                                           minlength=h * w)

    i00 = src[y0, x0]
    i01 = src[y0, x0 + 1]
    i10 = src[y0 + 1, x0]
    i11 = src[y0 + 1, x0 + 1]
    fxe = fx[..., None]
    fye = fy[..., None]
    d_dx = (1 - fye) * (i01 - i00) + fye * (i11 - i10)
    d_dy = (1 - fxe) * (i10 - i00) + fxe * (i11 - i01)
    grad_flow = np.stack([(d_dx * g).sum(axis=2), (d_dy * g).sum(axis=2)], axis=2)
    return grad_src.reshape(h, w, c), grad_flow
