import warnings

import numpy as np
import pytest

from motionblur import solver
from motionblur.core import NonFiniteError, ShapeError
from motionblur.fileio import generate_synthetic_sequence, synthesize_blur_pair
from motionblur.losses import total_loss
from motionblur.solver import SolverConfig, initialize, solve, step

SMALL = SolverConfig(iterations=12, pyramid_levels=2)


@pytest.fixture(scope="module")
def pair():
    frames = generate_synthetic_sequence("noise", (32, 32), (1, 0), 13, seed=0)
    return synthesize_blur_pair(frames, 5, 3, velocity=(1, 0))


@pytest.fixture(scope="module")
def solved(pair):
    return solve(pair.blur_a, pair.blur_b, SMALL)


def test_config_validation():
    for bad in [dict(iterations=0), dict(step_size_image=0), dict(step_size_flow=-1),
                dict(tv_weight_flow=-0.1), dict(pyramid_levels=0), dict(lam=-1)]:
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    cfg = SolverConfig()
    assert (cfg.lam, cfg.tv_weight_image, cfg.tv_weight_flow, cfg.pyramid_levels) == (2.0, 0.0, 0.01, 3)


def test_initialize(pair):
    st = initialize(pair.blur_a, pair.blur_b)
    assert np.all(st.flow_ab == 0) and np.all(st.flow_ba == 0)
    np.testing.assert_array_equal(st.I_a, pair.blur_a)
    with pytest.raises(ShapeError):
        initialize(np.zeros((4, 4)), np.zeros((4, 5)))


def test_initial_losses(pair, rng):
    s = rng.random((16, 16, 1))
    z = np.zeros((16, 16, 2))
    assert total_loss(s, s, s, s, z, z).total <= 1e-12
    z = np.zeros((32, 32, 2))
    assert total_loss(pair.blur_a, pair.blur_b, pair.blur_a, pair.blur_b, z, z).l_self < 1e-6


def test_zero_loss_state_is_fixed_point(rng):
    s = rng.random((16, 16, 1))
    st = initialize(s, s)
    before = [a.copy() for a in (st.I_a, st.I_b, st.flow_ab, st.flow_ba)]
    st, _ = step(st, SolverConfig())
    for a, b in zip(before, (st.I_a, st.I_b, st.flow_ab, st.flow_ba)):
        assert np.max(np.abs(a - b)) <= 1e-12
    assert len(st.loss_history) == 2


def test_flow_step_points_toward_truth():
    cfg = SolverConfig(iterations=1, pyramid_levels=1)
    good = 0
    for seed in range(10):
        frames = generate_synthetic_sequence("noise", (32, 32), (1, 0), 13, seed=seed)
        p = synthesize_blur_pair(frames, 5, 3, velocity=(1, 0))
        st = initialize(p.blur_a, p.blur_b)
        st, _ = step(st, cfg, update_images=False)
        np.testing.assert_array_equal(st.I_a, p.blur_a)
        moved = np.concatenate([st.flow_ab.ravel(), st.flow_ba.ravel()])
        target = np.concatenate([p.true_flow_hint.ravel(), -p.true_flow_hint.ravel()])
        good += moved @ target > 0
    assert good >= 9


def test_monotone_history(solved):
    obj = [r.objective for r in solved.loss_history]
    assert len(obj) == SMALL.iterations + 1
    assert all(b <= a for a, b in zip(obj, obj[1:]))
    for hist in solved.level_histories:
        o = [r.objective for r in hist]
        assert all(b <= a for a, b in zip(o, o[1:]))
    assert np.all(np.isfinite(solved.I_a)) and np.all(np.isfinite(solved.flow_ab))


def test_self_consistency_not_worse_than_inputs(pair, solved):
    cfg = SMALL.loss_config
    final = total_loss(pair.blur_a, pair.blur_b, solved.I_a, solved.I_b,
                       solved.flow_ab, solved.flow_ba, cfg)
    blurry = total_loss(pair.blur_a, pair.blur_b, pair.blur_a, pair.blur_b,
                        solved.flow_ab, solved.flow_ba, cfg)
    assert final.l_self <= blurry.l_self


def test_flow_moves_in_motion_direction(solved):
    assert solved.flow_ab[..., 0].mean() > 0.5
    assert solved.flow_ba[..., 0].mean() < -0.5


def test_static_pair_unchanged(rng):
    s = rng.random((24, 24, 1))
    st = solve(s, s, SMALL)
    assert np.max(np.abs(st.I_a - s)) <= 1e-12
    # only floating-point dust from the reblur average can move the flow
    assert np.max(np.abs(st.flow_ab)) <= 1e-9
    assert st.loss_history[-1].total < 1e-6


def test_constant_inputs_stay_constant():
    a = np.full((24, 24, 3), 0.3)
    b = np.full((24, 24, 3), 0.6)
    st = solve(a, b, SMALL)
    for img, c in ((st.I_a, 0.3), (st.I_b, 0.6)):
        assert np.max(np.abs(img - c)) <= 1e-6
    assert np.max(np.abs(st.flow_ab)) <= 1e-6 and np.max(np.abs(st.flow_ba)) <= 1e-6


def test_lambda_zero_warns(rng):
    s = rng.random((12, 12, 1))
    with pytest.warns(RuntimeWarning, match="ill-posed"):
        solve(s, s, SolverConfig(iterations=1, lam=0.0, pyramid_levels=1))


def test_deterministic(pair):
    cfg = SolverConfig(iterations=4, pyramid_levels=2)
    a = solve(pair.blur_a, pair.blur_b, cfg)
    b = solve(pair.blur_a, pair.blur_b, cfg)
    for k in ("I_a", "I_b", "flow_ab", "flow_ba"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()


def test_non_finite_gradient_aborts(pair, monkeypatch):
    real = solver.total_loss_and_grad

    def broken(*args, **kw):
        rep, g = real(*args, **kw)
        g["flow_ab"] = g["flow_ab"] * np.nan
        return rep, g

    monkeypatch.setattr(solver, "total_loss_and_grad", broken)
    with pytest.raises(NonFiniteError):
        step(initialize(pair.blur_a, pair.blur_b), SMALL)


def test_flow_resize_rescales_values():
    f = np.zeros((8, 10, 2))
    f[..., 0], f[..., 1] = 1.5, -2.0
    up = solver._resize_flow(f, (16, 20))
    np.testing.assert_allclose(up[..., 0], 3.0)
    np.testing.assert_allclose(up[..., 1], -4.0)


def test_level_shapes():
    assert solver._level_shapes(64, 64, 3) == [(16, 16), (32, 32), (64, 64)]
    assert solver._level_shapes(20, 20, 3) == [(20, 20)]


def test_preconditioned_direction_is_descent(rng):
    g = rng.standard_normal((10, 10, 2))
    d = solver.precondition_flow(g, 2.0)
    assert float((d * g).sum()) > 0
