import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbfsynth.core import (BarrierSpec, ControlAffineSystem, ExtendedClassK, LyapunovSpec,
                           check_gradient_consistency, fd_gradient, lie_derivatives)
from cbfsynth.errors import InvalidArgument, NumericalFailure


def double_integrator():
    return ControlAffineSystem(
        2, 1,
        f=lambda x: np.array([x[1], 0.0]),
        g=lambda x: np.array([[0.0], [1.0]]),
        input_box=([-1.0], [1.0]),
    )


CLASS_K = [
    ExtendedClassK.linear(2.0),
    ExtendedClassK.cubic(0.5),
    ExtendedClassK.tanh_linear(1.0, 0.1),
]


@pytest.mark.parametrize("alpha", CLASS_K, ids=lambda a: a.kind)
def test_class_k_zero_at_origin(alpha):
    assert alpha(0.0) == 0.0


@pytest.mark.parametrize("alpha", CLASS_K, ids=lambda a: a.kind)
@given(a=st.floats(-50, 50), b=st.floats(-50, 50))
def test_class_k_strictly_increasing(alpha, a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    assert alpha(lo) <= alpha(hi)
    if hi - lo > 1e-6:
        assert alpha(lo) < alpha(hi)


def test_class_k_vectorized_and_values():
    a = ExtendedClassK.tanh_linear(2.0, 0.5)
    r = np.array([-1.0, 0.0, 3.0])
    np.testing.assert_allclose(a(r), 2.0 * np.tanh(r) + 0.5 * r)
    assert ExtendedClassK.cubic(2.0)(-2.0) == -16.0


@pytest.mark.parametrize("kind,params", [("linear", (0.0,)), ("cubic", (-1.0,)),
                                         ("tanh_linear", (1.0,)), ("quartic", (1.0,)),
                                         ("linear", (math.inf,))])
def test_class_k_rejects_bad_parameters(kind, params):
    with pytest.raises(InvalidArgument):
        ExtendedClassK(kind, params)


def test_system_checks_finiteness():
    sys = ControlAffineSystem(1, 1, f=lambda x: np.array([np.nan]), g=lambda x: np.ones((1, 1)))
    with pytest.raises(NumericalFailure):
        sys.drift(np.zeros(1))


def test_system_box_membership():
    sys = double_integrator()
    assert sys.in_inputs([1.0]) and not sys.in_inputs([1.1])
    assert sys.in_domain([1e9, -1e9])


def test_system_rejects_malformed_box():
    with pytest.raises(InvalidArgument):
        ControlAffineSystem(2, 1, f=lambda x: x, g=lambda x: x, input_box=([1.0], [-1.0]))


def test_lie_derivatives_double_integrator():
    sys = double_integrator()
    lf, lg = lie_derivatives(sys, np.array([-1.0, -0.5]), np.array([0.0, 2.0]))
    assert lf == -2.0
    np.testing.assert_array_equal(lg, [-0.5])


def test_constraint_row_matches_definition():
    sys = double_integrator()
    wall = 1.0
    spec = BarrierSpec(lambda x: wall - x[0] - 0.5 * x[1] ** 2,
                       lambda x: np.array([-1.0, -x[1]]),
                       ExtendedClassK.linear(3.0))
    x = np.array([0.2, 0.5])
    a, b = spec.constraint_row(sys, x)
    # a = Lg h = -v ; b = -Lf h - alpha(h) = v - 3 h
    h = wall - 0.2 - 0.125
    np.testing.assert_allclose(a, [-0.5])
    assert b == pytest.approx(0.5 - 3.0 * h, abs=1e-15)


def test_fd_gradient_five_point_accuracy():
    fun = lambda x: math.sin(x[0]) * math.exp(x[1]) + x[0] ** 4
    x = np.array([0.7, -0.3])
    exact = np.array([math.cos(0.7) * math.exp(-0.3) + 4 * 0.7 ** 3, math.sin(0.7) * math.exp(-0.3)])
    np.testing.assert_allclose(fd_gradient(fun, x), exact, atol=1e-11)


def test_gradient_check_passes_on_correct_gradient(rng):
    spec = BarrierSpec(lambda x: 1.0 - x @ x, lambda x: -2.0 * x)
    rep = check_gradient_consistency(spec, rng.standard_normal((20, 3)))
    assert rep.passed and rep.failing == []


def test_gradient_check_flags_wrong_gradient(rng):
    spec = BarrierSpec(lambda x: 1.0 - x @ x, lambda x: -2.1 * x)
    rep = check_gradient_consistency(spec, rng.standard_normal((10, 3)) + 1.0)
    assert not rep.passed
    assert rep.failing


def test_gradient_tolerance_scales_with_norm():
    big = 1e6
    spec = BarrierSpec(lambda x: big * x[0], lambda x: np.array([big * (1 + 5e-5)]))
    # deviation 50 is below 1e-4 * ||grad|| = 100
    assert check_gradient_consistency(spec, [np.array([0.3])]).passed


def test_lyapunov_decay_and_positive_definite(rng):
    lyap = LyapunovSpec(lambda x: float(x @ x), lambda x: 2.0 * x, ExtendedClassK.linear(2.0),
                        epsilon=0.5, x_eq=(0.0, 0.0))
    x = np.array([1.0, 1.0])
    assert lyap.decay(x) == 8.0
    assert lyap.check_positive_definite(rng.standard_normal((20, 2)))


def test_lyapunov_not_positive_definite():
    lyap = LyapunovSpec(lambda x: float(x[0] ** 2), lambda x: np.array([2 * x[0], 0.0]),
                        x_eq=(0.0, 0.0))
    assert not lyap.check_positive_definite([np.array([0.0, 1.0])])


@pytest.mark.parametrize("eps", [0.0, 1.5])
def test_lyapunov_epsilon_range(eps):
    with pytest.raises(InvalidArgument):
        LyapunovSpec(lambda x: 0.0, lambda x: x, epsilon=eps)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_lie_derivative_equals_directional_derivative(xs):
    sys = double_integrator()
    x = np.array(xs)
    h = lambda y: math.cos(y[0]) + y[0] * y[1] ** 2
    grad = lambda y: np.array([-math.sin(y[0]) + y[1] ** 2, 2 * y[0] * y[1]])
    u = np.array([0.3])
    lf, lg = lie_derivatives(sys, grad(x), x)
    step = 1e-6
    xdot = sys.xdot(x, u)
    fd = (h(x + step * xdot) - h(x - step * xdot)) / (2 * step)
    assert lf + lg @ u == pytest.approx(fd, abs=1e-6)
