import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avdit.nn import NEW, Parameter
from avdit.optim import AdamW, NonFiniteGradError


def _param(values):
    return Parameter(np.array(values, dtype=np.float64), NEW)


def test_hand_evaluated_update():
    p = _param([1.0])
    opt = AdamW([("p", p)], lr=0.1, betas=(0.0, 0.0), eps=0.0)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.9, abs=1e-15)


def test_first_step_moves_each_coordinate_by_lr():
    # bias correction makes the first update lr * sign(g)
    p = _param([0.0, 0.0, 0.0])
    opt = AdamW([("p", p)], lr=0.01, eps=0.0)
    p.grad = np.array([3.0, -0.5, 1e-3])
    opt.step()
    np.testing.assert_allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.integers(1, 5))
def test_zero_gradient_is_a_fixed_point(values, steps):
    p = _param(values)
    start = p.data.copy()
    opt = AdamW([("p", p)], lr=0.1)
    for _ in range(steps):
        p.grad = np.zeros_like(p.data)
        opt.step()
    np.testing.assert_array_equal(p.data, start)


def test_decoupled_weight_decay():
    p = _param([2.0])
    opt = AdamW([("p", p)], lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(1)
    opt.step()
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_frozen_parameters_are_ignored():
    w = Parameter(np.ones((2, 2)), "backbone")
    b = Parameter(np.ones(2), "backbone", is_bias=True)
    opt = AdamW([("w", w), ("b", b)])
    assert [n for n, _ in opt.params] == ["b"]


def test_non_finite_gradient_names_parameter():
    a, b = _param([1.0]), _param([1.0])
    opt = AdamW([("good", a), ("bad", b)], lr=0.1)
    a.grad = np.array([1.0])
    b.grad = np.array([np.nan])
    with pytest.raises(NonFiniteGradError, match="bad"):
        opt.step()
    assert a.data[0] == 1.0 and opt.state.step == 0


def test_minimizes_quadratic():
    p = _param([3.0, -2.0])
    opt = AdamW([("p", p)], lr=0.05)
    for _ in range(500):
        p.grad = 2 * p.data
        opt.step()
    assert np.abs(p.data).max() < 0.05
