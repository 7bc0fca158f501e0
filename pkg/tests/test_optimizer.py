from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from focallab.netmodel import ModelGrads, init_params
from focallab.optimizer import (
    OptimKind,
    OptimSpec,
    adamw_step,
    clip_grad_norm,
    init_state,
    sgd_step,
    shrink_on_epoch,
    warmup_linear_lr,
    warmup_steps,
)


def grads_like(params, fill):
    return ModelGrads.from_arrays([np.full_like(a, fill) for a in params.arrays()])


class TestSchedule:
    def test_endpoints(self):
        assert warmup_linear_lr(0, 100, 2e-5, 0.1) == 0.0
        assert warmup_linear_lr(10, 100, 2e-5, 0.1) == 2e-5
        assert warmup_linear_lr(100, 100, 2e-5, 0.1) == 0.0

    def test_interior(self):
        assert warmup_linear_lr(55, 100, 2e-5, 0.1) == pytest.approx(1e-5, rel=1e-12)
        assert warmup_linear_lr(5, 100, 2e-5, 0.1) == pytest.approx(1e-5, rel=1e-12)

    def test_warmup_rounds_up(self):
        assert warmup_steps(95, 0.1) == 10

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            warmup_linear_lr(101, 100, 1.0, 0.1)

    @given(st.integers(1, 5000), st.floats(0.0, 1.0), st.data())
    def test_bounded_and_unimodal(self, total, frac, data):
        s = data.draw(st.integers(0, total - 1))
        a = warmup_linear_lr(s, total, 1.0, frac)
        b = warmup_linear_lr(s + 1, total, 1.0, frac)
        assert 0.0 <= a <= 1.0
        if s + 1 <= warmup_steps(total, frac):
            assert b >= a
        elif s >= warmup_steps(total, frac):
            assert b <= a


class TestClip:
    def test_three_four_five(self):
        g = ModelGrads(np.array([[3.0]]), np.array([4.0]), np.zeros((3, 1)), np.zeros(3))
        clipped, scale = clip_grad_norm(g, 1.0)
        np.testing.assert_allclose(clipped.w1, [[0.6]], rtol=1e-15)
        np.testing.assert_allclose(clipped.b1, [0.8], rtol=1e-15)
        assert scale == pytest.approx(0.2)

    def test_below_threshold_untouched(self):
        g = ModelGrads(np.array([[0.3]]), np.array([0.4]), np.zeros((3, 1)), np.zeros(3))
        clipped, scale = clip_grad_norm(g, 5.0)
        assert scale == 1.0 and clipped is g

    def test_non_finite(self):
        g = ModelGrads(np.array([[np.inf]]), np.array([0.0]), np.zeros((3, 1)), np.zeros(3))
        with pytest.raises(ValueError, match="non-finite"):
            clip_grad_norm(g, 1.0)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), st.floats(0.01, 10))
    def test_norm_never_exceeds_max(self, vals, max_norm):
        g = ModelGrads(np.array([vals[:2]]), np.array([vals[2]]), np.array([[vals[3]], [0.0], [0.0]]), np.zeros(3))
        clipped, _ = clip_grad_norm(g, max_norm)
        assert clipped.global_norm() <= max_norm * (1 + 1e-12)


class TestSGD:
    def test_shrink(self):
        assert shrink_on_epoch(0.1, 5) == pytest.approx(0.02)
        with pytest.raises(ValueError):
            shrink_on_epoch(0.1, 0.5)

    def test_step(self):
        p = init_params(2, 2, seed=0)
        q = sgd_step(p, grads_like(p, 1.0), 0.1)
        for a, b in zip(p.arrays(), q.arrays()):
            np.testing.assert_allclose(b, a - 0.1)

    def test_recipe(self):
        spec = OptimSpec.infersent_recipe()
        assert (spec.kind, spec.peak_lr, spec.shrink_factor, spec.clip_norm) == (OptimKind.SGD, 0.1, 5.0, 5.0)


class TestAdamW:
    def test_zero_grad_zero_decay_fixed_point(self):
        spec = replace(OptimSpec.bert_recipe(), weight_decay=0.0)
        p = init_params(4, 3, seed=0)
        state = init_state(spec, p, total_steps=10)
        state.current_lr = 2e-5
        q, state = adamw_step(state, p, grads_like(p, 0.0), spec)
        assert q.equals(p)
        assert state.step_counter == 1

    def test_decay_is_decoupled(self):
        spec = OptimSpec(kind=OptimKind.ADAMW, peak_lr=0.1, weight_decay=0.5)
        p = init_params(2, 2, seed=1)
        state = init_state(spec, p, total_steps=10)
        state.current_lr = 0.1
        q, _ = adamw_step(state, p, grads_like(p, 0.0), spec)
        for a, b in zip(p.arrays(), q.arrays()):
            np.testing.assert_allclose(b, a * (1 - 0.1 * 0.5), rtol=1e-15)

    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update ~lr * sign(g)
        spec = OptimSpec(kind=OptimKind.ADAMW, peak_lr=0.01, adam_eps=1e-12)
        p = init_params(2, 2, seed=1)
        state = init_state(spec, p, total_steps=10)
        state.current_lr = 0.01
        q, _ = adamw_step(state, p, grads_like(p, -3.0), spec)
        for a, b in zip(p.arrays(), q.arrays()):
            np.testing.assert_allclose(b - a, 0.01, rtol=1e-9)

    def test_shape_mismatch(self):
        spec = OptimSpec(kind=OptimKind.ADAMW)
        p = init_params(2, 2, seed=1)
        state = init_state(spec, p, total_steps=10)
        with pytest.raises(ValueError, match="shape"):
            adamw_step(state, p, grads_like(init_params(3, 2, seed=0), 0.0), spec)
