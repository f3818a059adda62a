"""Reachability masks for occlusion handling.

A pixel is visible when enough mass, bilinearly splatted along the flow from
the other view, lands on it.
"""

import numpy as np

from .core import as_flow

SPLAT_THRESHOLD = 0.25


def splat_density(flow):
    """Mass received by each pixel when every pixel pushes unit mass along ``flow``."""
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = (xs + flow[..., 0]).ravel()
    ty = (ys + flow[..., 1]).ravel()
    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    density = np.zeros(h * w)
    for ox, oy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        cx = x0 + ox
        cy = y0 + oy
        inside = (cx >= 0) & (cx <= w - 1) & (cy >= 0) & (cy <= h - 1) & (wt > 0)
        idx = (cy[inside] * w + cx[inside]).astype(np.int64)
        density += np.bincount(idx, weights=wt[inside], minlength=h * w)
    return density.reshape(h, w)


def reachability_mask(flow_from_other, threshold=SPLAT_THRESHOLD):
    """Binary mask of pixels reached by the other view through ``flow_from_other``."""
    return (splat_density(flow_from_other) >= threshold).astype(np.float64)


def self_consistency_mask(step_flow, N, threshold=SPLAT_THRESHOLD):
    """Product of the reachability masks of all ``2N + 1`` virtual frames."""
    step_flow = as_flow(step_flow)
    if N < 0:
        raise ValueError("N must be >= 0")
    mask = np.ones(step_flow.shape[:2])
    for i in range(-N, N + 1):
        if i == 0:
            continue
        mask *= reachability_mask(i * step_flow, threshold)
    return mask
