import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbfsynth.backup import (BackupCbf, HorizonWarning, as_barrier_spec, backup_flow, backup_h,
                             backup_h_batch, backup_h_details, backup_h_gradient,
                             backup_value_and_gradient)
from cbfsynth.core import ControlAffineSystem
from cbfsynth.errors import DivergedFlow, InvalidArgument
from cbfsynth.scenarios import braking, segway

BRAKE = braking.backup_cbf()


def test_still_flow_is_constant():
    sys = ControlAffineSystem(2, 1, f=lambda x: np.zeros(2), g=lambda x: np.zeros((2, 1)))
    b = BackupCbf(sys, lambda x: x[0], lambda x: np.zeros(1), 1.0, 0.1)
    taus, states = backup_flow(b, np.array([0.3, -0.2]), 1.0)
    assert taus[0] == 0.0 and taus[-1] == 1.0
    np.testing.assert_array_equal(states, np.tile([0.3, -0.2], (len(taus), 1)))


def test_braking_flow_stops_at_half():
    taus, states = backup_flow(BRAKE, np.array([0.0, 1.0]), 1.0)
    assert taus[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(states[-1], [0.5, 0.0], atol=1e-6)


def test_flow_includes_partial_last_step():
    taus, _ = backup_flow(BRAKE, np.array([0.0, 1.0]), 0.123)
    assert taus[-1] == 0.123 and taus[-2] == pytest.approx(0.1)


def test_flow_fourth_order():
    sys = ControlAffineSystem(2, 1, f=lambda x: np.array([x[1], -np.sin(x[0])]),
                              g=lambda x: np.array([[0.0], [1.0]]))
    x0 = np.array([1.0, 0.0])
    ends = []
    for dt in (0.1, 0.05, 0.025):
        b = BackupCbf(sys, lambda x: x[0], lambda x: np.array([-0.2 * x[1]]), 2.0, dt)
        ends.append(backup_flow(b, x0, 2.0)[1][-1])
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    assert np.log2(ratio) >= 3.5


def test_diverging_flow_raises():
    sys = ControlAffineSystem(1, 1, f=lambda x: x ** 2, g=lambda x: np.zeros((1, 1)))
    b = BackupCbf(sys, lambda x: x[0], lambda x: np.zeros(1), 5.0, 0.05)
    with pytest.raises(DivergedFlow):
        backup_h(b, np.array([2.0]))


@pytest.mark.parametrize("T,dt", [(1.0, 0.3), (0.5, 0.1)])
def test_horizon_grid_must_be_integer_and_long(T, dt):
    with pytest.raises(InvalidArgument):
        BackupCbf(BRAKE.sys, BRAKE.rho, BRAKE.beta, T, dt)


def test_braking_value_matches_closed_form():
    assert backup_h(BRAKE, np.array([0.0, 1.0])) == pytest.approx(0.5, abs=1e-3)


def test_braking_value_on_grid(rng):
    X = np.column_stack([rng.uniform(-2, 1, 200), rng.uniform(-2, 2.5, 200)])
    np.testing.assert_allclose(backup_h_batch(BRAKE, X), braking.closed_form_h(X), atol=1e-9)


def test_grid_only_minimum_bounded_by_step_variation(rng):
    coarse = dataclasses.replace(BRAKE, refine=False)
    X = np.column_stack([rng.uniform(-2, 1, 100), rng.uniform(0, 2.5, 100)])
    grid = backup_h_batch(coarse, X)
    exact = braking.closed_form_h(X)
    # rho changes by at most v * dt per step near the stop; the error is second order there
    assert np.all(grid >= exact - 1e-12)
    assert np.all(grid - exact <= 0.5 * BRAKE.sys.input_box[1][0] * BRAKE.flow_dt ** 2 + 1e-12)


def test_minimum_at_start_returns_rho():
    x = np.array([0.2, -0.5])
    assert backup_h(BRAKE, x) == pytest.approx(float(BRAKE.rho(x)), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 1), st.floats(-3, 3))
def test_h_never_above_rho(p, v):
    x = np.array([p, v])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonWarning)
        assert backup_h(BRAKE, x) <= float(BRAKE.rho(x)) + 1e-12


def test_segway_h_never_above_rho(rng):
    b = segway.backup_cbf(segway.SegwayLiteParams())
    X = rng.uniform(-0.2, 0.2, size=(100, 4)) * np.array([5, 1, 2, 2])
    h = backup_h_batch(b, X)
    rho = np.array([b.rho(x) for x in X])
    assert np.all(h <= rho + 1e-12)


def test_longer_horizon_never_larger(rng):
    long = dataclasses.replace(BRAKE, horizon_T=2 * BRAKE.horizon_T)
    X = np.column_stack([rng.uniform(-2, 1, 100), rng.uniform(0, 8, 100)])
    assert np.all(backup_h_batch(long, X) <= backup_h_batch(BRAKE, X) + 1e-12)


def test_halving_flow_dt_changes_little(rng):
    b = segway.backup_cbf(segway.SegwayLiteParams())
    fine = dataclasses.replace(b, flow_dt=b.flow_dt / 2)
    X = rng.uniform(-0.1, 0.1, size=(40, 4))
    coarse_h, fine_h = backup_h_batch(b, X), backup_h_batch(fine, X)
    # bound: largest change of rho between neighbouring samples, per state
    for x, hc, hf in zip(X, coarse_h, fine_h):
        _, st_ = backup_flow(b, x, b.horizon_T)
        rho = np.array([b.rho(s) for s in st_])
        assert abs(hc - hf) <= np.abs(np.diff(rho)).max() + 1e-9


def test_horizon_warning():
    short = dataclasses.replace(BRAKE, horizon_T=1.0)
    with pytest.warns(HorizonWarning):
        backup_h(short, np.array([0.0, 3.0]))
    assert backup_h_details(short, np.array([0.0, 3.0]))[2]


def test_gradient_braking():
    g = backup_h_gradient(BRAKE, np.array([0.0, 1.0]))
    np.testing.assert_allclose(g, [-1.0, -1.0], atol=2e-2)


def test_gradient_of_constant_rho():
    b = dataclasses.replace(BRAKE, rho=lambda x: np.ones(np.shape(x)[:-1]))
    np.testing.assert_allclose(backup_h_gradient(b, np.array([0.1, 0.4])), 0.0, atol=1e-12)


def test_gradient_step_halving():
    x = np.array([-0.3, 0.7])
    s = 1e-3
    g1 = backup_h_gradient(BRAKE, x, fd_step=s)
    g2 = backup_h_gradient(BRAKE, x, fd_step=s / 2)
    richardson = (4 * g2 - g1) / 3
    # central differences: truncation ~ s^2 |h'''|; h is quadratic in v so both agree closely
    assert np.abs(richardson - g1).max() <= 10 * s ** 2 + 1e-8


def test_barrier_spec_memo_matches_direct():
    spec = as_barrier_spec(BRAKE)
    x = np.array([0.1, 0.8])
    val, grad = spec.value_and_grad(x)
    assert spec.h(x) == val == backup_h(BRAKE, x)
    np.testing.assert_array_equal(spec.grad_h(x), grad)
    np.testing.assert_array_equal(grad, backup_value_and_gradient(BRAKE, x)[1])


def test_beta_meets_barrier_row(rng):
    spec = as_barrier_spec(BRAKE)
    count = 0
    while count < 100:
        x = np.array([rng.uniform(-2, 1), rng.uniform(-1.5, 1.5)])
        if backup_h(BRAKE, x) < 0:
            continue
        a, b = spec.constraint_row(BRAKE.sys, x)
        assert a @ BRAKE.beta(x) >= b - 1e-2
        count += 1


def test_negative_h_means_rho_dips(rng):
    for _ in range(50):
        x = np.array([rng.uniform(-1, 1), rng.uniform(0, 3)])
        if backup_h(BRAKE, x) < 0:
            _, states = backup_flow(BRAKE, x, BRAKE.horizon_T)
            assert np.min(BRAKE.rho(states)) < 0


def test_beta_in_inputs(rng):
    assert BRAKE.beta_in_inputs(rng.standard_normal((20, 2)))
    b = segway.backup_cbf(segway.SegwayLiteParams())
    assert b.beta_in_inputs(rng.uniform(-0.3, 0.3, size=(50, 4)))
