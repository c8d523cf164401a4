import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgnn.errors import AllDivergedError, InsufficientDataError, InvalidInputError
from pgnn.forecast import (
    DIVERGENCE_LIMIT,
    Rollout,
    Z_68,
    ensemble_forecast,
    ensemble_stats,
    euler_rollout,
    read_forecast_csv,
    read_report_csv,
    relative_rfmse,
    rfmse,
    write_forecast_csv,
    write_report_csv,
)
from pgnn.integrator import Trajectory, simulate
from pgnn.network import InjectionConfig, init_params, standard_sizes
from pgnn.systems import get_system


def test_zero_model_is_constant():
    r = euler_rollout(lambda x: np.zeros_like(x), [1.0, 2.0], 0.1, 20)
    assert not r.diverged and len(r) == 21
    assert np.all(r.states == [1.0, 2.0])


def test_hand_euler():
    r = euler_rollout(lambda x: -x, [1.0], 0.1, 2)
    np.testing.assert_allclose(r.states[:, 0], [1.0, 0.9, 0.81], rtol=1e-15)


def test_square_model_diverges_at_step_three():
    r = euler_rollout(lambda x: x * x, [10.0], 1.0, 10)
    assert r.diverged and r.diverged_at == 3
    np.testing.assert_array_equal(r.states[:, 0], [10.0, 110.0, 12210.0])
    assert 10.0 + 1.0 * 12210.0**2 + 12210.0 > DIVERGENCE_LIMIT


def test_nonfinite_counts_as_divergence():
    r = euler_rollout(lambda x: np.full_like(x, np.nan), [0.0], 0.1, 5)
    assert r.diverged_at == 1 and len(r) == 1


def test_rollout_arguments():
    with pytest.raises(InvalidInputError):
        euler_rollout(lambda x: x, [1.0], 0.0, 3)
    with pytest.raises(InvalidInputError):
        euler_rollout(lambda x: x, [1.0], 0.1, 0)


def test_network_rollout_matches_python_loop():
    spec = get_system("lotka_volterra")
    net = init_params(standard_sizes(2), "tanh", InjectionConfig("lv_xy", 2), 3)
    from pgnn.network import predict_derivative
    fast = euler_rollout(net, [5.0, 1.0], 0.05, 100)
    slow = euler_rollout(lambda x: predict_derivative(net, spec, x), [5.0, 1.0], 0.05, 100)
    np.testing.assert_allclose(fast.states, slow.states, rtol=1e-12, atol=1e-12)


def test_rfmse_examples():
    truth = np.sin(np.linspace(0, 3, 31))
    assert rfmse(truth, truth, 2.0, 0.1) == 0.0
    assert rfmse(truth + 1, truth, 1.3, 0.1) == pytest.approx(1.0, abs=1e-15)
    diverged = Rollout(truth[:11, None], 0.1, diverged_at=11)
    assert rfmse(diverged, truth, 2.5, 0.1) == math.inf


def test_rfmse_window_is_inclusive():
    truth = np.zeros(11)
    pred = np.zeros(11)
    pred[5] = 1.0
    # steps 0..5 lie in the window 0.5 s at h = 0.1
    assert rfmse(pred, truth, 0.5, 0.1) == pytest.approx(1 / 6)
    assert rfmse(pred, truth, 0.45, 0.1) == 0.0


def test_rfmse_divergence_after_window_is_finite():
    truth = np.zeros((30, 1))
    late = Rollout(np.zeros((20, 1)), 0.1, diverged_at=20)
    assert rfmse(late, truth, 1.0, 0.1) == 0.0


def test_rfmse_errors():
    with pytest.raises(InvalidInputError):
        rfmse(np.zeros(5), np.zeros(5), 1.0, 0.1)
    with pytest.raises(InvalidInputError):
        rfmse(Rollout(np.zeros((5, 1)), 0.2), np.zeros(5), 0.1, 0.1)


def test_two_point_band():
    t = np.linspace(0, 1, 11)[:, None]
    mean, std, lo, hi, n = ensemble_stats([t + 1, t - 1], 11, 1.96)
    np.testing.assert_allclose(mean, t, atol=1e-15)
    # sample standard deviation (n - 1 denominator) of {+1, -1} is sqrt(2)
    np.testing.assert_allclose(std, 2 ** 0.5, rtol=1e-15)
    np.testing.assert_allclose(hi - mean, 1.96 * 2 ** 0.5, rtol=1e-12)
    assert np.all(n == 2)


def test_band_example_unit_std():
    # offsets of +-1/sqrt(2) give a unit sample standard deviation
    t = np.linspace(0, 1, 5)[:, None]
    d = 1 / 2 ** 0.5
    mean, std, lo, hi, _ = ensemble_stats([t + d, t - d], 5, 1.96)
    np.testing.assert_allclose(std, 1.0, rtol=1e-15)
    np.testing.assert_allclose(hi - mean, 1.96, rtol=1e-14)
    np.testing.assert_allclose(mean - lo, 1.96, rtol=1e-14)


def test_identical_members_zero_width():
    p = np.random.default_rng(0).normal(size=(20, 3))
    mean, std, lo, hi, _ = ensemble_stats([p, p.copy(), p.copy()], 20, 1.96)
    assert np.all(std == 0) and np.all(lo == hi)


def test_diverged_member_excluded():
    good = [np.full((100, 1), 1.0), np.full((100, 1), 3.0)]
    dead = np.full((10, 1), 1000.0)
    mean, std, lo, hi, n = ensemble_stats(good + [dead], 100, 1.96)
    assert mean[50, 0] == 2.0
    assert n[5] == 3 and n[50] == 2
    only_one = ensemble_stats([np.ones((100, 1)), dead], 100, 1.96)
    assert np.isnan(only_one[0][50, 0]) and only_one[4][50] == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 1000))
def test_band_brackets_mean(n_members, seed):
    rng = np.random.default_rng(seed)
    paths = [rng.normal(size=(rng.integers(1, 30), 2)) for _ in range(n_members)]
    mean, std, lo, hi, n = ensemble_stats(paths, 30, Z_68)
    ok = n >= 2
    assert np.all(lo[ok] <= mean[ok]) and np.all(mean[ok] <= hi[ok])
    assert np.all(np.isnan(mean[~ok]))


def test_ensemble_forecast_on_true_rhs():
    spec = get_system("lotka_volterra")
    truth = simulate(spec.rhs, spec.defaults.test_ic, 0.0, 0.05, 30.0)
    res = ensemble_forecast([spec.rhs, spec.rhs], spec, truth)
    assert res.window == 25
    assert res.n_diverged == 0
    assert np.all(res.std == 0)
    assert res.rfmse_mean == res.rfmse_per_member[0] and res.rfmse_mean < 0.1
    with pytest.raises(InsufficientDataError):
        ensemble_forecast([spec.rhs], spec, truth)


def test_ensemble_rfmse_excludes_diverged():
    spec = get_system("lotka_volterra")
    truth = simulate(spec.rhs, spec.defaults.test_ic, 0.0, 0.05, 30.0)
    res = ensemble_forecast([spec.rhs, spec.rhs, lambda x: x * x * 100], spec, truth)
    assert res.n_diverged == 1
    assert math.isfinite(res.rfmse_mean)
    assert res.diverged[2] is not None


def test_relative_examples():
    rel = relative_rfmse({("a", "t", 1): 2.0, ("a", "t", 2): 4.0, ("a", "t", 3): 8.0,
                          ("b", "none", 0): 7.5, ("c", "x", 1): 3.0, ("c", "x", 2): math.inf})
    assert [rel[("a", "t", l)] for l in (1, 2, 3)] == [1.0, 2.0, 4.0]
    assert rel[("b", "none", 0)] == 1.0
    assert rel[("c", "x", 1)] == 1.0 and rel[("c", "x", 2)] == math.inf
    with pytest.raises(AllDivergedError):
        relative_rfmse({("d", "none", 0): math.inf})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=12))
def test_relative_minimum_is_one(values):
    rel = relative_rfmse({("s", "t", i): v for i, v in enumerate(values)})
    assert min(rel.values()) == 1.0


def test_forecast_csv_round_trip(tmp_path):
    spec = get_system("van_der_pol")
    truth = simulate(spec.rhs, spec.defaults.test_ic, 0.0, spec.defaults.h, 3.0)
    res = ensemble_forecast([spec.rhs, lambda x: 1.01 * spec.rhs(x)], spec, truth)
    write_forecast_csv(res, tmp_path / "f.csv")
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "t,truth_0,truth_1,mean_0,mean_1,lo_0,lo_1,hi_0,hi_1,n_alive"
    back = read_forecast_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(back["mean"], res.mean)
    np.testing.assert_array_equal(back["truth"], truth.states)
    np.testing.assert_array_equal(back["n_alive"], res.n_alive)


def test_report_csv_round_trip(tmp_path):
    rows = [{"system": "lorenz", "term": "none", "layer": 0, "rfmse_mean": 0.5,
             "rfmse_std": math.nan, "n_diverged": 2, "relative_rfmse": 1.0},
            {"system": "lorenz", "term": "lor_xy", "layer": 1, "rfmse_mean": math.inf,
             "rfmse_std": math.nan, "n_diverged": 10, "relative_rfmse": math.inf}]
    write_report_csv(rows, tmp_path / "r.csv")
    back = read_report_csv(tmp_path / "r.csv")
    assert back[1]["relative_rfmse"] == math.inf and back[0]["n_diverged"] == 2
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == \
        "system,term,layer,rfmse_mean,rfmse_std,n_diverged,relative_rfmse"
