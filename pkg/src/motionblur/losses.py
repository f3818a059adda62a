"""Masked photometric losses and their gradients.

``total = l_self + lam * l_fwbw`` where ``l_self`` compares each reblurred
latent with its observed blurry frame and ``l_fwbw`` compares each latent
with the other latent backward-warped into its frame.  Every l1 term is
normalized by its mask sum (times channels).  Masks are treated as
constants when differentiating.
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .backward_warp import backward_warp, backward_warp_vjp
from .core import ReblurConfig, ShapeError, as_flow, as_image, as_mask, check_same_grid
from .occlusion import reachability_mask, self_consistency_mask
from .reblur import DEFAULT_N, reblur, reblur_vjp, scale_flow_to_exposure

DEFAULT_LAMBDA = 2.0


@dataclass(frozen=True)
class LossConfig:
    lam: float = DEFAULT_LAMBDA
    N: int = DEFAULT_N
    exposure_tau: float = 1.0
    frame_interval_dt: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        self.reblur_config  # validates timing

    @property
    def reblur_config(self):
        return ReblurConfig(self.N, self.exposure_tau, self.frame_interval_dt)

    @property
    def flow_scale(self):
        if self.N == 0:
            return 0.0
        return self.exposure_tau / (2 * self.N * self.frame_interval_dt)


@dataclass
class LossReport:
    l_self: float
    l_fwbw: float
    total: float
    masked_pixel_counts: Dict[str, int] = field(default_factory=dict)

    def as_dict(self):
        return {"l_self": self.l_self, "l_fwbw": self.l_fwbw, "total": self.total,
                "masked_pixel_counts": dict(self.masked_pixel_counts)}


def _check_pair(a, b, mask):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if mask.shape != a.shape[:2]:
        raise ShapeError(f"mask {mask.shape} does not match image {a.shape[:2]}")


def masked_l1(a, b, mask):
    a, b, mask = as_image(a), as_image(b), as_mask(mask)
    _check_pair(a, b, mask)
    norm = mask.sum() * a.shape[2]
    if norm == 0:
        return 0.0
    return float((mask[..., None] * np.abs(a - b)).sum() / norm)


def masked_l1_grad(a, b, mask):
    """Subgradient of ``masked_l1`` with respect to ``a`` (zero at ties)."""
    a, b, mask = as_image(a), as_image(b), as_mask(mask)
    _check_pair(a, b, mask)
    norm = mask.sum() * a.shape[2]
    if norm == 0:
        return np.zeros_like(a)
    return mask[..., None] * np.sign(a - b) / norm


def loss_self(reblur_a, blur_a, reblur_b, blur_b, occl_a=None, occl_b=None):
    """Self-consistency term; each side is masked by its reblur coverage
    product, times the optional virtual-frame reachability mask."""
    ma = reblur_a.mask if occl_a is None else reblur_a.mask * occl_a
    mb = reblur_b.mask if occl_b is None else reblur_b.mask * occl_b
    return masked_l1(reblur_a.blurred, blur_a, ma) + masked_l1(reblur_b.blurred, blur_b, mb)


def loss_fwbw(I_a, I_b, flow_ab, flow_ba, occl_a, occl_b):
    wa, valid_a = backward_warp(I_b, flow_ab)
    wb, valid_b = backward_warp(I_a, flow_ba)
    return (masked_l1(wa, I_a, as_mask(occl_a) * valid_a)
            + masked_l1(wb, I_b, as_mask(occl_b) * valid_b))


@dataclass
class _Evaluation:
    report: LossReport
    reblur_a: object
    reblur_b: object
    masks: Dict[str, np.ndarray]
    warped: Dict[str, np.ndarray]
    step_a: np.ndarray
    step_b: np.ndarray


def _evaluate(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config):
    blur_a, blur_b = as_image(blur_a, "blur_a"), as_image(blur_b, "blur_b")
    I_a, I_b = as_image(I_a, "I_a"), as_image(I_b, "I_b")
    flow_ab, flow_ba = as_flow(flow_ab, "flow_ab"), as_flow(flow_ba, "flow_ba")
    check_same_grid(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba,
                    names=("blur_a", "blur_b", "I_a", "I_b", "flow_ab", "flow_ba"))
    if not (blur_a.shape == blur_b.shape == I_a.shape == I_b.shape):
        raise ShapeError("images must share channel count")

    rc = config.reblur_config
    step_a = scale_flow_to_exposure(flow_ab, rc)
    step_b = scale_flow_to_exposure(flow_ba, rc)
    ra = reblur(I_a, step_a, config.N)
    rb = reblur(I_b, step_b, config.N)
    m_self_a = ra.mask * self_consistency_mask(step_a, config.N)
    m_self_b = rb.mask * self_consistency_mask(step_b, config.N)

    wa, valid_a = backward_warp(I_b, flow_ab)
    wb, valid_b = backward_warp(I_a, flow_ba)
    m_fw_a = reachability_mask(flow_ba) * valid_a
    m_fw_b = reachability_mask(flow_ab) * valid_b

    l_self = masked_l1(ra.blurred, blur_a, m_self_a) + masked_l1(rb.blurred, blur_b, m_self_b)
    l_fwbw = masked_l1(wa, I_a, m_fw_a) + masked_l1(wb, I_b, m_fw_b)
    counts = {"self_a": int(m_self_a.sum()), "self_b": int(m_self_b.sum()),
              "fwbw_a": int(m_fw_a.sum()), "fwbw_b": int(m_fw_b.sum())}
    report = LossReport(l_self, l_fwbw, l_self + config.lam * l_fwbw, counts)
    masks = {"self_a": m_self_a, "self_b": m_self_b, "fwbw_a": m_fw_a, "fwbw_b": m_fw_b}
    return _Evaluation(report, ra, rb, masks, {"a": wa, "b": wb}, step_a, step_b)


def total_loss(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config=LossConfig()):
    return _evaluate(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config).report


def total_loss_and_grad(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config=LossConfig()):
    """Return ``(report, grads)`` with grads keyed ``I_a, I_b, flow_ab, flow_ba``."""
    ev = _evaluate(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config)
    I_a, I_b = as_image(I_a), as_image(I_b)
    flow_ab, flow_ba = as_flow(flow_ab), as_flow(flow_ba)
    blur_a, blur_b = as_image(blur_a), as_image(blur_b)
    s = config.flow_scale
    m = ev.masks

    g_ra = masked_l1_grad(ev.reblur_a.blurred, blur_a, m["self_a"])
    g_rb = masked_l1_grad(ev.reblur_b.blurred, blur_b, m["self_b"])
    gI_a, gu_a = reblur_vjp(I_a, ev.step_a, config.N, g_ra, ev.reblur_a)
    gI_b, gu_b = reblur_vjp(I_b, ev.step_b, config.N, g_rb, ev.reblur_b)
    g_fab = s * gu_a
    g_fba = s * gu_b

    if config.lam > 0:
        lam = config.lam
        # term a: |warp(I_b, flow_ab) - I_a|
        g_wa = masked_l1_grad(ev.warped["a"], I_a, m["fwbw_a"])
        gs, gf = backward_warp_vjp(I_b, flow_ab, g_wa)
        gI_b = gI_b + lam * gs
        g_fab = g_fab + lam * gf
        gI_a = gI_a - lam * g_wa
        # term b: |warp(I_a, flow_ba) - I_b|
        g_wb = masked_l1_grad(ev.warped["b"], I_b, m["fwbw_b"])
        gs, gf = backward_warp_vjp(I_a, flow_ba, g_wb)
        gI_a = gI_a + lam * gs
        g_fba = g_fba + lam * gf
        gI_b = gI_b - lam * g_wb

    grads = {"I_a": gI_a, "I_b": gI_b, "flow_ab": g_fab, "flow_ba": g_fba}
    return ev.report, grads


def total_loss_vjp(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config=LossConfig()):
    return total_loss_and_grad(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config)[1]


def loss_masks(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config=LossConfig()):
    """The four masks used by ``total_loss`` (for inspection and plots)."""
    return _evaluate(blur_a, blur_b, I_a, I_b, flow_ab, flow_ba, config).masks
