"""Variational self-supervised deblurring.

Given two consecutive blurry frames, jointly estimate both latent sharp
images and the bidirectional flow by safeguarded gradient descent on the
photometric objective, coarse to fine.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage.transform import resize

from .backward_warp import backward_warp, backward_warp_vjp
from .core import NonFiniteError, ShapeError, as_image
from .losses import LossConfig, LossReport, total_loss_and_grad
from .reblur import DEFAULT_N

log = logging.getLogger(__name__)

MAX_HALVINGS = 10
TV_EPS = 1e-2
MIN_LEVEL_SIZE = 12


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 150
    step_size_image: float = 0.02
    step_size_flow: float = 2.0
    lam: float = 2.0
    N: int = DEFAULT_N
    tv_weight_image: float = 0.0
    tv_weight_flow: float = 0.01
    pyramid_levels: int = 3
    seed: int = 0
    exposure_tau: float = 1.0
    frame_interval_dt: float = 1.0
    update_images: bool = True
    update_flows: bool = True
    flow_smoothing: float = 2.0
    warmup_fraction: float = 0.3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size_image <= 0 or self.step_size_flow <= 0:
            raise ValueError("step sizes must be positive")
        if self.tv_weight_image < 0 or self.tv_weight_flow < 0:
            raise ValueError("TV weights must be >= 0")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        self.loss_config  # validates lam, N and timing

    @property
    def loss_config(self):
        return LossConfig(self.lam, self.N, self.exposure_tau, self.frame_interval_dt)


@dataclass
class SolverReport(LossReport):
    """Loss report plus the optional smoothness terms the solver descends."""

    regularizer: float = 0.0
    objective: float = 0.0
    step_scales: Dict[str, float] = field(default_factory=dict)

    def as_dict(self):
        d = super().as_dict()
        d.update(regularizer=self.regularizer, objective=self.objective,
                 step_scales=dict(self.step_scales))
        return d


@dataclass
class SolverState:
    blur_a: np.ndarray
    blur_b: np.ndarray
    I_a: np.ndarray
    I_b: np.ndarray
    flow_ab: np.ndarray
    flow_ba: np.ndarray
    loss_history: List[SolverReport] = field(default_factory=list)
    level_histories: List[List[SolverReport]] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=lambda: {"evaluations": 0,
                                                             "rejected_steps": 0})
    trial_scale: Dict[str, float] = field(default_factory=lambda: {"flow": 1.0,
                                                                   "image": 1.0})


def initialize(blur_a, blur_b):
    blur_a = as_image(blur_a, "blur_a")
    blur_b = as_image(blur_b, "blur_b")
    if blur_a.shape != blur_b.shape:
        raise ShapeError(f"blurry inputs differ in shape: {blur_a.shape} vs {blur_b.shape}")
    h, w = blur_a.shape[:2]
    return SolverState(blur_a, blur_b, blur_a.copy(), blur_b.copy(),
                       np.zeros((h, w, 2)), np.zeros((h, w, 2)))


def _tv(field_, eps=TV_EPS):
    """Charbonnier total variation (mean over pixels) and its gradient."""
    dx = np.diff(field_, axis=1)
    dy = np.diff(field_, axis=0)
    rx = np.sqrt(dx * dx + eps * eps)
    ry = np.sqrt(dy * dy + eps * eps)
    n = field_.shape[0] * field_.shape[1]
    value = ((rx - eps).sum() + (ry - eps).sum()) / n
    gx = dx / rx / n
    gy = dy / ry / n
    grad = np.zeros_like(field_)
    grad[:, 1:] += gx
    grad[:, :-1] -= gx
    grad[1:] += gy
    grad[:-1] -= gy
    return value, grad


def _objective(state, variables, config):
    I_a, I_b, f_ab, f_ba = variables
    report, grads = total_loss_and_grad(state.blur_a, state.blur_b, I_a, I_b, f_ab, f_ba,
                                        config.loss_config)
    state.counters["evaluations"] += 1
    reg = 0.0
    if config.tv_weight_image > 0:
        for key, img in (("I_a", I_a), ("I_b", I_b)):
            v, g = _tv(img)
            reg += config.tv_weight_image * v
            grads[key] = grads[key] + config.tv_weight_image * g
    if config.tv_weight_flow > 0:
        for key, fl in (("flow_ab", f_ab), ("flow_ba", f_ba)):
            v, g = _tv(fl)
            reg += config.tv_weight_flow * v
            grads[key] = grads[key] + config.tv_weight_flow * g
    rep = SolverReport(report.l_self, report.l_fwbw, report.total,
                       report.masked_pixel_counts, reg, report.total + reg)
    return rep, grads


def _variables(state):
    return (state.I_a, state.I_b, state.flow_ab, state.flow_ba)


def _line_search(state, config, current, variables, direction, block):
    """Backtracking along ``direction``; returns ``(variables, report, grads, scale)``.

    ``scale`` is 0 when no trial within ten halvings avoids an increase.
    """
    scale = min(1.0, 2.0 * state.trial_scale[block])
    for _ in range(MAX_HALVINGS + 1):
        trial = tuple(v + scale * d for v, d in zip(variables, direction))
        rep, grads = _objective(state, trial, config)
        if rep.objective <= current.objective:
            state.trial_scale[block] = scale
            return trial, rep, grads, scale
        scale *= 0.5
    state.trial_scale[block] = 1.0
    return None, None, None, 0.0


def step(state, config, _cache=None, update_images=None):
    """One safeguarded descent step; appends to ``state.loss_history``.

    The flow block and then the image block are each moved along their
    descent direction, halving the trial step up to ten times until the
    objective does not increase.  A block with no acceptable trial is left
    unchanged, so the objective never increases.
    """
    current, grads = _cache if _cache is not None else _objective(state, _variables(state), config)
    if not state.loss_history:
        state.loss_history.append(current)
    if update_images is None:
        update_images = config.update_images
    n = state.I_a.shape[0] * state.I_a.shape[1]
    scales = {}

    blocks = []
    if config.update_flows:
        blocks.append("flow")
    if update_images:
        blocks.append("image")
    for block in blocks:
        for key, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {key}")
        variables = _variables(state)
        if block == "flow":
            t = config.step_size_flow * n
            direction = (0.0, 0.0,
                         -t * precondition_flow(grads["flow_ab"], config.flow_smoothing),
                         -t * precondition_flow(grads["flow_ba"], config.flow_smoothing))
        else:
            t = config.step_size_image * n
            d_a, d_b = coupled_image_direction(grads, state.flow_ab, state.flow_ba)
            direction = (t * d_a, t * d_b, 0.0, 0.0)
        trial, rep, trial_grads, scale = _line_search(state, config, current, variables,
                                                      direction, block)
        scales[block] = scale
        if trial is None:
            state.counters["rejected_steps"] += 1
            continue
        state.I_a, state.I_b, state.flow_ab, state.flow_ba = trial
        current, grads = rep, trial_grads

    current = replace(current, step_scales=scales)
    state.loss_history.append(current)
    return state, (current, grads)


def coupled_image_direction(grads, flow_ab, flow_ba):
    """Image descent direction that keeps the two latents warp-consistent.

    A shared perturbation ``d`` of ``I_a`` moves ``I_b`` by ``warp(d,
    flow_ba)``; the objective's gradient along that path is ``g_a +
    warp^T g_b``.  The mirrored path is added, and both halves are descent
    directions.  Perturbing one latent alone is blocked by the l1 kink of the
    forward/backward term once the latents agree.
    """
    g_a, g_b = grads["I_a"], grads["I_b"]
    d_a = -(g_a + backward_warp_vjp(g_a, flow_ba, g_b)[0])
    d_b = -(g_b + backward_warp_vjp(g_b, flow_ab, g_a)[0])
    dir_a = 0.5 * (d_a + backward_warp(d_b, flow_ab)[0])
    dir_b = 0.5 * (backward_warp(d_a, flow_ba)[0] + d_b)
    return dir_a, dir_b


def precondition_flow(grad, sigma):
    """Smoothed flow descent direction (a Sobolev-type gradient).

    Gaussian smoothing with zero padding is a symmetric positive
    semi-definite operator and the mean term is positive definite, so the
    result is still a descent direction for the flow.
    """
    if sigma <= 0:
        return grad
    out = np.empty_like(grad)
    for c in range(grad.shape[2]):
        out[..., c] = gaussian_filter(grad[..., c], sigma, mode="constant") + grad[..., c].mean()
    return out


def _resize_image(img, shape):
    return resize(img, shape + img.shape[2:], order=1, mode="edge",
                  anti_aliasing=True, preserve_range=True)


def _resize_flow(flow, shape):
    h, w = flow.shape[:2]
    out = resize(flow, shape + (2,), order=1, mode="edge", anti_aliasing=False,
                 preserve_range=True)
    out[..., 0] *= shape[1] / w
    out[..., 1] *= shape[0] / h
    return out


def _level_shapes(h, w, levels):
    shapes = [(h, w)]
    for _ in range(levels - 1):
        ph, pw = shapes[-1]
        nh, nw = (ph + 1) // 2, (pw + 1) // 2
        if min(nh, nw) < MIN_LEVEL_SIZE:
            break
        shapes.append((nh, nw))
    return shapes[::-1]


def solve(blur_a, blur_b, config=SolverConfig(), callback=None):
    """Coarse-to-fine descent; returns the finest-level ``SolverState``.

    ``state.loss_history`` is the finest-level history; every level's history
    is kept in ``state.level_histories``.
    """
    if config.lam == 0:
        warnings.warn("lambda = 0: the photometric reblur loss alone does not "
                      "constrain the flow; the problem is ill-posed", RuntimeWarning)
    fine = initialize(blur_a, blur_b)
    h, w = fine.blur_a.shape[:2]
    shapes = _level_shapes(h, w, config.pyramid_levels)

    prev = None
    histories = []
    counters = {"evaluations": 0, "rejected_steps": 0}
    for level, shape in enumerate(shapes):
        if shape == (h, w):
            ba, bb = fine.blur_a, fine.blur_b
        else:
            ba, bb = _resize_image(fine.blur_a, shape), _resize_image(fine.blur_b, shape)
        state = initialize(ba, bb)
        state.counters = counters
        if prev is not None:
            state.flow_ab = _resize_flow(prev.flow_ab, shape)
            state.flow_ba = _resize_flow(prev.flow_ba, shape)
            # Carry the sharpening detail found at the coarser level.
            state.I_a = ba + _resize_image(prev.I_a - prev.blur_a, shape)
            state.I_b = bb + _resize_image(prev.I_b - prev.blur_b, shape)
        cache = None
        warmup = int(round(config.warmup_fraction * config.iterations))
        for it in range(config.iterations):
            images = config.update_images and it >= warmup
            state, cache = step(state, config, cache, update_images=images)
            if callback is not None:
                callback(level, it, state)
            log.debug("level %d iter %d objective %.6g", level, it,
                      state.loss_history[-1].objective)
        histories.append(state.loss_history)
        prev = state

    prev.level_histories = histories
    return prev
