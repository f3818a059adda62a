"""Motion-blur synthesis under the linear-motion model.

A blurred frame is the average of ``2N + 1`` virtual frames, virtual frame
``i`` being the sharp image forward-warped by ``i * step_flow``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import ShapeError, as_flow, as_image, check_same_grid, get_threads
from .mesh_warp import ForwardWarpResult, forward_warp, forward_warp_vjp

DEFAULT_N = 8


@dataclass
class ReblurResult:
    blurred: np.ndarray
    mask: np.ndarray
    virtual_coverages: Optional[List[np.ndarray]] = None
    warps: List[ForwardWarpResult] = field(default_factory=list, repr=False)


def scale_flow_to_exposure(inter_frame_flow, config=None, *, N=None, exposure_tau=None,
                           frame_interval_dt=None):
    """Per-virtual-step flow ``tau / (2 N dt) * inter_frame_flow``.

    Pass a ``ReblurConfig``, or the three numbers as keywords to apply the
    bare scaling without the physical ``tau <= dt`` check.  With ``N == 0``
    there is a single virtual frame and the result is zero.
    """
    flow = as_flow(inter_frame_flow)
    if config is not None:
        N, exposure_tau, frame_interval_dt = (config.N, config.exposure_tau,
                                              config.frame_interval_dt)
    if N is None or exposure_tau is None or frame_interval_dt is None:
        raise TypeError("give a ReblurConfig or N, exposure_tau and frame_interval_dt")
    if N < 0 or exposure_tau <= 0 or frame_interval_dt <= 0:
        raise ValueError("need N >= 0 and positive times")
    if N == 0:
        return np.zeros_like(flow)
    return flow * (exposure_tau / (2 * N * frame_interval_dt))


def _map(fn, items):
    threads = get_threads()
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def reblur(sharp, step_flow, N=DEFAULT_N, keep_coverages=False):
    sharp = as_image(sharp, "sharp")
    step_flow = as_flow(step_flow, "step_flow")
    check_same_grid(sharp, step_flow, names=("sharp", "step_flow"))
    if N < 0:
        raise ValueError("N must be >= 0")
    offsets = list(range(-N, N + 1))
    warps = _map(lambda i: forward_warp(sharp, i * step_flow), offsets)

    # Fixed ascending accumulation order keeps results bit-identical.
    acc = np.zeros_like(sharp)
    mask = np.ones(sharp.shape[:2])
    for wr in warps:
        acc += wr.image
        mask *= wr.coverage
    blurred = acc / (2 * N + 1)
    coverages = [wr.coverage for wr in warps] if keep_coverages else None
    return ReblurResult(blurred, mask, coverages, warps)


def reblur_vjp(sharp, step_flow, N, upstream, result=None):
    """Gradients of ``sum(upstream * reblur(sharp, step_flow, N).blurred)``."""
    sharp = as_image(sharp, "sharp")
    step_flow = as_flow(step_flow, "step_flow")
    upstream = as_image(upstream, "upstream")
    check_same_grid(sharp, step_flow, upstream, names=("sharp", "step_flow", "upstream"))
    if upstream.shape != sharp.shape:
        raise ShapeError(f"upstream {upstream.shape} != sharp {sharp.shape}")
    if result is None:
        result = reblur(sharp, step_flow, N)
    offsets = list(range(-N, N + 1))
    scale = 1.0 / (2 * N + 1)

    def one(k):
        i = offsets[k]
        return forward_warp_vjp(sharp, i * step_flow, upstream, result.warps[k])

    grads = _map(one, list(range(len(offsets))))
    grad_sharp = np.zeros_like(sharp)
    grad_flow = np.zeros_like(step_flow)
    for i, (gs, gf) in zip(offsets, grads):
        grad_sharp += gs
        grad_flow += i * gf
    return grad_sharp * scale, grad_flow * scale


def convolution_reblur_1d(signal, halfwidth):
    """Gather-style box blur: ``B[i]`` averages ``I[i-k..i+k]`` with ``k = halfwidth[i]``.

    ``halfwidth`` may be a single integer or one integer per sample.  Samples
    past the ends are replicated from the edge.  This is the convolution
    model that the warp-based reblur replaces; it gathers along each pixel's
    own kernel instead of scattering each pixel along its trajectory.
    """
    signal = np.asarray(signal, dtype=np.float64)
    n = len(signal)
    hw = np.broadcast_to(np.asarray(halfwidth, dtype=np.int64), (n,))
    if np.any(hw < 0):
        raise ValueError("halfwidth must be >= 0")
    if n <= 2 * hw.max():
        raise ValueError("signal too short for the blur halfwidth")
    out = np.empty_like(signal)
    for i in range(n):
        k = hw[i]
        idx = np.clip(np.arange(i - k, i + k + 1), 0, n - 1)
        out[i] = signal[idx].mean()
    return out
