import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from pgnn.errors import BlowUpError, InvalidInputError, OutOfRangeError
from pgnn.integrator import (
    SolverSteps,
    dp45_step,
    grid_size,
    integrate_adaptive,
    resample_uniform,
    simulate,
)
from pgnn.systems import get_system


def decay(x):
    return -x


def oscillator(x):
    return np.array([x[1], -x[0]])


def test_step_zero_rhs():
    x5, err = dp45_step(lambda x: np.zeros_like(x), np.array([1.5, -2.0]), 0.0, 0.3)
    np.testing.assert_array_equal(x5, [1.5, -2.0])
    assert err == 0.0


def test_step_decay():
    # on x' = -x the fifth-order solution is the stability polynomial
    # R(z) = sum_{j<=5} z^j/j! + z^6/600, whose deviation from e^z at z = -0.1
    # is about 2.8e-10
    z = -0.1
    R = sum(z ** j / math.factorial(j) for j in range(6)) + z ** 6 / 600
    x5, err = dp45_step(decay, np.array([1.0]), 0.0, 0.1)
    assert x5[0] == pytest.approx(R, abs=1e-15)
    assert abs(x5[0] - math.exp(-0.1)) < 3e-10
    assert err >= 0


def test_step_constant_rhs_is_exact():
    x5, err = dp45_step(lambda x: np.ones_like(x), np.array([0.0]), 0.0, 0.5)
    assert x5[0] == pytest.approx(0.5, abs=1e-15)
    # the scaled estimate is pure rounding noise: |delta| ~ 1e-17 over atol 1e-9
    assert err < 1e-9


def test_step_rejects_nonfinite():
    with pytest.raises(BlowUpError):
        dp45_step(lambda x: np.full_like(x, np.inf), np.array([0.0]), 0.0, 0.1)


def test_adaptive_decay_tight_tolerance():
    steps = integrate_adaptive(decay, [1.0], 0.0, 1.0, rtol=1e-10, atol=1e-12)
    assert abs(steps.states[-1, 0] - 0.3678794412) < 1e-8
    assert steps.times[-1] == 1.0


def test_adaptive_decay_default_tolerance_is_close():
    steps = integrate_adaptive(decay, [1.0], 0.0, 1.0)
    assert abs(steps.states[-1, 0] - math.exp(-1)) < 1e-6


def test_oscillator_period_return():
    steps = integrate_adaptive(oscillator, [1.0, 0.0], 0.0, 2 * math.pi)
    np.testing.assert_allclose(steps.states[-1], [1.0, 0.0], atol=1e-6)


def test_zero_rhs_keeps_state():
    steps = integrate_adaptive(lambda x: np.zeros_like(x), [3.0, 4.0], 0.0, 10.0)
    assert np.all(steps.states == [3.0, 4.0])


def test_steps_invariants():
    spec = get_system("lorenz")
    steps = integrate_adaptive(spec.rhs, [1.0, 1.0, 1.0], 0.0, 2.0)
    assert steps.times[0] == 0.0 and steps.times[-1] >= 2.0 - 1e-12
    assert np.all(np.diff(steps.times) > 0)
    for x, f in zip(steps.states, steps.derivs):
        np.testing.assert_array_equal(spec.rhs(x), f)


def test_invalid_arguments():
    with pytest.raises(InvalidInputError):
        integrate_adaptive(decay, [1.0], 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        integrate_adaptive(decay, [1.0], 0.0, 1.0, rtol=0.0)


def test_finite_time_blowup_is_reported():
    # x' = x^2 from x0 = 1 escapes at t = 1
    with pytest.raises(BlowUpError) as info:
        integrate_adaptive(lambda x: x * x, [1.0], 0.0, 2.0)
    assert 0.9 < info.value.t < 1.01


def test_grid_size_counts():
    assert grid_size(0.0, 0.05, 200.0) == 4001
    assert grid_size(0.0, 0.005, 25.0) == 5001
    assert grid_size(0.0, 0.1, 1.0) == 11


def test_resample_linear_is_exact():
    steps = integrate_adaptive(lambda x: np.ones_like(x), [0.0], 0.0, 3.0)
    traj = resample_uniform(steps, 0.0, 0.1, 3.0)
    np.testing.assert_allclose(traj.states[:, 0], 0.1 * np.arange(31), atol=1e-12)


def test_resample_exponential():
    traj = simulate(decay, [1.0], 0.0, 0.01, 5.0, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(traj.states[:, 0], np.exp(-traj.times), atol=1e-6)


def test_resample_copies_accepted_states():
    steps = SolverSteps(
        times=np.array([0.0, 0.5, 1.0]),
        states=np.array([[0.0], [0.123456789], [1.0]]),
        derivs=np.array([[7.0], [-3.0], [2.0]]),
    )
    traj = resample_uniform(steps, 0.0, 0.25, 1.0)
    assert traj.states[2, 0] == 0.123456789
    assert traj.states[0, 0] == 0.0 and traj.states[4, 0] == 1.0


def test_resample_out_of_range():
    steps = integrate_adaptive(decay, [1.0], 0.0, 1.0)
    with pytest.raises(OutOfRangeError):
        resample_uniform(steps, 0.0, 0.1, 2.0)


def test_lv_trajectory_length():
    spec = get_system("lotka_volterra")
    traj = simulate(spec.rhs, spec.defaults.train_ics[0], 0.0, 0.05, 200.0)
    assert len(traj) == 4001
    assert np.all(np.isfinite(traj.states))


@pytest.mark.parametrize("system, T", [("lotka_volterra", 50.0), ("van_der_pol", 10.0),
                                       ("lorenz", 2.0), ("duffing", 20.0)])
def test_agrees_with_scipy_dop853(system, T):
    spec = get_system(system)
    x0 = np.asarray(spec.defaults.test_ic, dtype=float)
    traj = simulate(spec.rhs, x0, 0.0, spec.defaults.h, T, rtol=1e-10, atol=1e-12)
    ref = solve_ivp(lambda t, x: spec.rhs(x), (0.0, T), x0, method="DOP853",
                    t_eval=traj.times, rtol=1e-12, atol=1e-14)
    scale = 1 + np.abs(ref.y.T).max()
    assert np.abs(traj.states - ref.y.T).max() < 1e-6 * scale


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 2.0))
def test_linear_decay_property(x0, rate):
    steps = integrate_adaptive(lambda x: -rate * x, [x0], 0.0, 2.0)
    assert abs(steps.states[-1, 0] - x0 * math.exp(-2 * rate)) < 1e-5 * (1 + abs(x0))
