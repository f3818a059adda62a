"""Finite-difference checks of the analytic vector-Jacobian products.

Every suite draws seeded random 6x6 instances, probes each input coordinate
with a central difference, and skips coordinates whose perturbation changes
a discrete choice (fragment assignment, bilinear cell, mask value or l1
residual sign), since the maps are only piecewise smooth.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backward_warp as bw
from . import losses, mesh_warp
from . import reblur as rb

SIZE = 6
H_IMAGE = 1e-3
H_FLOW = 1e-4
ATOL = 1e-8
KINK_MARGIN = 1e-2
RESIDUAL_MARGIN = 1e-3
MIN_PASS_RATE = 0.99
REBLUR_N = 2
LOSS_SAMPLES = 6  # random coordinates per variable per trial for total_loss


@dataclass
class SuiteResult:
    name: str
    tolerance: float
    probed: int = 0
    excluded: int = 0
    passed: int = 0
    max_rel_error: float = 0.0
    failures: list = field(default_factory=list, repr=False)

    @property
    def pass_rate(self):
        return self.passed / self.probed if self.probed else 0.0

    @property
    def ok(self):
        return self.probed > 0 and self.pass_rate >= MIN_PASS_RATE

    def record(self, analytic, numeric, where):
        self.probed += 1
        mag = max(abs(analytic), abs(numeric))
        rel = 0.0 if mag < ATOL else abs(analytic - numeric) / mag
        self.max_rel_error = max(self.max_rel_error, rel)
        if rel < self.tolerance:
            self.passed += 1
        else:
            self.failures.append((where, analytic, numeric))

    def as_dict(self):
        return {"probed": self.probed, "excluded": self.excluded, "passed": self.passed,
                "pass_rate": round(self.pass_rate, 6),
                "max_rel_error": float(f"{self.max_rel_error:.6g}"),
                "tolerance": self.tolerance, "ok": self.ok}


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def probe(result, x, grad, h, f, signature=None, skip=None, where="", stable=None,
          coords=None):
    """Compare ``grad`` with central differences of ``f`` at coordinates of ``x``.

    All coordinates are probed unless ``coords`` lists a subset.  A
    coordinate is excluded when ``skip(idx)`` is true, when the discrete
    ``signature`` differs at ``x +- h``, or when ``stable(xp, xm)`` is false.
    """
    base = signature(x) if signature is not None else None
    for idx in (np.ndindex(x.shape) if coords is None else coords):
        if skip is not None and skip(idx):
            result.excluded += 1
            continue
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        if signature is not None and not (_same(signature(xp), base)
                                          and _same(signature(xm), base)):
            result.excluded += 1
            continue
        if stable is not None and not stable(xp, xm):
            result.excluded += 1
            continue
        numeric = (f(xp) - f(xm)) / (2 * h)
        result.record(float(grad[idx]), float(numeric), (where, idx))


def _instance(rng, trial, flow_range=1.5):
    channels = 1 if trial % 2 == 0 else 3
    src = rng.random((SIZE, SIZE, channels))
    flow = rng.uniform(-flow_range, flow_range, (SIZE, SIZE, 2))
    upstream = rng.standard_normal((SIZE, SIZE, channels))
    return src, flow, upstream


def check_forward_warp(rng, trial, result):
    src, flow, up = _instance(rng, trial)
    g_src, g_flow = mesh_warp.forward_warp_vjp(src, flow, up)

    def value(s, f):
        return float((mesh_warp.forward_warp(s, f).image * up).sum())

    probe(result, src, g_src, H_IMAGE, lambda s: value(s, flow), where="src")
    probe(result, flow, g_flow, H_FLOW, lambda f: value(src, f),
          signature=lambda f: (mesh_warp.rasterize(f)[0],), where="flow")


def _sample_points(flow):
    h, w = flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs + flow[..., 0], ys + flow[..., 1]], axis=2)


def _near_kink(flow):
    frac = _sample_points(flow) % 1.0
    return (frac < KINK_MARGIN) | (frac > 1 - KINK_MARGIN)


def check_backward_warp(rng, trial, result):
    src, flow, up = _instance(rng, trial)
    g_src, g_flow = bw.backward_warp_vjp(src, flow, up)

    def value(s, f):
        return float((bw.backward_warp(s, f)[0] * up).sum())

    kink = _near_kink(flow)
    probe(result, src, g_src, H_IMAGE, lambda s: value(s, flow), where="src")
    probe(result, flow, g_flow, H_FLOW, lambda f: value(src, f),
          signature=lambda f: (np.floor(_sample_points(f)),),
          skip=lambda idx: bool(kink[idx]), where="flow")


def _reblur_signature(step_flow, N):
    return tuple(mesh_warp.rasterize(i * step_flow)[0] for i in range(-N, N + 1))


def check_reblur(rng, trial, result):
    src, flow, up = _instance(rng, trial, flow_range=1.5 / REBLUR_N)
    g_src, g_flow = rb.reblur_vjp(src, flow, REBLUR_N, up)

    def value(s, f):
        return float((rb.reblur(s, f, REBLUR_N).blurred * up).sum())

    probe(result, src, g_src, H_IMAGE, lambda s: value(s, flow), where="sharp")
    probe(result, flow, g_flow, H_FLOW, lambda f: value(src, f),
          signature=lambda f: _reblur_signature(f, REBLUR_N), where="step_flow")


def _loss_signature(args, config):
    """Everything discrete inside ``total_loss`` for the given inputs."""
    blur_a, blur_b, I_a, I_b, f_ab, f_ba = args
    ev = losses._evaluate(blur_a, blur_b, I_a, I_b, f_ab, f_ba, config)
    sig = list(_reblur_signature(ev.step_a, config.N))
    sig += list(_reblur_signature(ev.step_b, config.N))
    sig += [ev.masks[k] for k in sorted(ev.masks)]
    sig += [np.floor(_sample_points(f_ab)), np.floor(_sample_points(f_ba))]
    residuals = [ev.reblur_a.blurred - blur_a, ev.reblur_b.blurred - blur_b,
                 ev.warped["a"] - I_a, ev.warped["b"] - I_b]
    sig += [np.sign(r) for r in residuals]
    return sig, residuals, ev.report.total


def check_total_loss(rng, trial, result):
    channels = 1 if trial % 2 == 0 else 3
    shape = (SIZE, SIZE, channels)
    args = [rng.random(shape), rng.random(shape), rng.random(shape), rng.random(shape),
            rng.uniform(-1.5, 1.5, (SIZE, SIZE, 2)), rng.uniform(-1.5, 1.5, (SIZE, SIZE, 2))]
    config = losses.LossConfig(lam=2.0, N=REBLUR_N)
    grads = losses.total_loss_vjp(*args, config)
    base_sig, base_res = _loss_signature(args, config)[:2]
    cache = {}

    def evaluate(pos, x):
        key = (pos, x.tobytes())
        if key not in cache:
            a = list(args)
            a[pos] = x
            cache[key] = _loss_signature(a, config)
        return cache[key]

    def stable(pos):
        # Discrete choices must not change, and every residual the probe moves
        # must stay clear of the l1 kink.
        def check(xp, xm):
            for x in (xp, xm):
                sig, res, _ = evaluate(pos, x)
                if not _same(sig, base_sig):
                    return False
                for r, r0 in zip(res, base_res):
                    moved = r != r0
                    if np.any(np.abs(r0[moved]) <= RESIDUAL_MARGIN):
                        return False
            return True
        return check

    for pos, key in ((2, "I_a"), (3, "I_b"), (4, "flow_ab"), (5, "flow_ba")):
        x = args[pos]
        h = H_IMAGE if pos < 4 else H_FLOW
        flat = rng.choice(x.size, size=LOSS_SAMPLES, replace=False)
        coords = [np.unravel_index(i, x.shape) for i in flat]
        probe(result, x, grads[key], h, lambda x, pos=pos: evaluate(pos, x)[2],
              stable=stable(pos), where=key, coords=coords)
        cache.clear()


SUITES = {
    "forward_warp": (check_forward_warp, 1e-3),
    "backward_warp": (check_backward_warp, 1e-3),
    "reblur": (check_reblur, 1e-3),
    "total_loss": (check_total_loss, 1e-2),
}


def run_gradcheck(seed=0, trials=100, suites=None):
    """Run the named suites (default all); returns ``{name: SuiteResult}``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    out = {}
    for name in suites or SUITES:
        fn, tol = SUITES[name]
        result = SuiteResult(name, tol)
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial])
            fn(rng, trial, result)
        out[name] = result
    return out
