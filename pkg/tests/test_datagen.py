import math

import numpy as np
import pytest

from ude_discover.datagen import (NpiScheduleSpec, ObservableWalk,
                                  RcDatasetSpec, SirDatasetSpec, TimeSeries,
                                  dataset_sha256, dataset_to_json,
                                  eoh_subsample, gen_npi_dataset,
                                  gen_rc_dataset, gen_sir_dataset,
                                  gen_tau_walk_dataset, max_tau, rc_analytic,
                                  regenerate_window, true_beta_series)
from ude_discover.dynamics import RcParams
from ude_discover.errors import StructuralError


def final_size_root(r0: float, s0: float) -> float:
    """Bisection solve of log(s/s0) = r0*(s - 1) for the epidemic's end state."""
    f = lambda s: math.log(s / s0) - r0 * (s - 1.0)
    lo, hi = 1e-12, 1.0 - 1e-12
    assert f(lo) > 0 > f(hi) or f(lo) < 0 < f(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (f(lo) <= 0) == (f(mid) <= 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_rc_analytic_values():
    params = RcParams(2.0, 1.0)
    assert rc_analytic(0.0, params, 0.0) == 0.0
    assert abs(rc_analytic(200.0, params, 0.0) - 1.0) <= 1e-12
    assert rc_analytic(2.0, params, 0.0) == pytest.approx(1 - math.exp(-1), rel=1e-12)


def test_rc_dataset_respects_spec():
    data = gen_rc_dataset(RcDatasetSpec(n_instances=50), 7)
    assert len(data) == 50
    for series in data:
        assert series.times[0] == 0.0 and series.states[0, 0] == 0.0
        assert 2.0 <= series.meta["tau"] <= 6.0
        assert 5.0 <= series.meta["v_s"] <= 10.0
        assert series.states[-1, 0] >= 0.993 * series.meta["v_s"]
        assert series.times.shape[0] == 10
        # every stored point sits exactly on the closed form
        params = RcParams(series.meta["tau"], series.meta["v_s"])
        for t, v in zip(series.times, series.states[:, 0]):
            assert v == rc_analytic(t, params, 0.0)


def test_dataset_serialization_is_deterministic():
    spec = RcDatasetSpec(n_instances=5)
    a = dataset_to_json(gen_rc_dataset(spec, 3), spec, 3)
    b = dataset_to_json(gen_rc_dataset(spec, 3), spec, 3)
    assert a == b
    assert dataset_sha256(gen_rc_dataset(spec, 3), spec, 3) == \
        dataset_sha256(gen_rc_dataset(spec, 3), spec, 3)
    c = dataset_to_json(gen_rc_dataset(spec, 4), spec, 4)
    assert a != c


def test_sir_dataset_conservation_and_monotonicity():
    data = gen_sir_dataset(SirDatasetSpec(n_instances=5), 11)
    for series in data:
        total = series.states.sum(axis=1)
        assert np.abs(total - 1.0).max() <= 1e-9
        r = series.states[:, 2]
        assert np.all(np.diff(r) >= 0)
        infected = series.states[:, 1]
        peak = int(np.argmax(infected))
        assert np.all(np.diff(infected[peak:]) <= 1e-12)
        assert 0.2 <= series.meta["beta"] <= 0.4


def test_sir_final_size_relation():
    # run the generator to the end of the outbreak so the final size exists
    spec = SirDatasetSpec(n_instances=1, beta_range=(0.2, 0.2), days=300)
    series = gen_sir_dataset(spec, 0)[0]
    s_end = series.states[-1, 0]
    s_inf = final_size_root(0.2 / 0.1, 0.99)
    assert abs(s_end - s_inf) <= 2e-3


def test_sir_oracle_resolution_converged():
    times = np.arange(101, dtype=float)
    from ude_discover.kernels import sir_fixed_beta_curve
    rng = np.random.default_rng(9)
    for _ in range(5):
        beta = rng.uniform(0.2, 0.4)
        a = sir_fixed_beta_curve(times, beta, 0.1, 0.99, 0.01, 0.0, 10_000)
        b = sir_fixed_beta_curve(times, beta, 0.1, 0.99, 0.01, 0.0, 20_000)
        assert np.abs(a - b).max() <= 1e-5


def test_tau_walk_dataset_shape_and_monotonicity():
    data = gen_tau_walk_dataset(20, seed=5)
    for series in data:
        x = np.asarray(series.meta["x"])
        assert x[0] == 1.0
        assert np.all(np.diff(x) >= 0.0) and np.all(np.diff(x) <= 1.0)
        assert series.meta["a"] * x.min() >= 2.0
        v = series.states[:, 0]
        assert np.all(np.diff(v) > 0)
        assert np.all(v < 1.0)
        assert series.exog.shape == (9, 1)
        assert np.array_equal(series.exog[:, 0], x[:-1])


def test_observable_walk_validation():
    with pytest.raises(StructuralError):
        ObservableWalk((0.5, 1.0), 2.0)
    with pytest.raises(StructuralError):
        ObservableWalk((1.0, 2.5), 2.0)


def test_npi_dataset_weekly_structure():
    data = gen_npi_dataset(NpiScheduleSpec(n_instances=5), 3)
    for series in data:
        assert series.times.shape[0] == 20
        assert series.times[-1] == 140.0
        betas = true_beta_series(series)
        assert np.all(betas <= series.meta["beta_hat"] + 1e-15)
        total = series.states.sum(axis=1)
        assert np.abs(total - 1.0).max() <= 1e-9
        # exogenous rows equal the week-of-interval-start flags
        for k, t in enumerate(series.times[:-1]):
            w = min(int(t // 7.0), len(series.meta["npis"]) - 1)
            assert list(series.exog[k]) == [float(v) for v in series.meta["npis"][w]]


def test_npi_identity_effects_reduce_to_fixed_generator():
    spec = NpiScheduleSpec(n_instances=1)
    series = gen_npi_dataset(spec, 8)[0]
    meta = dict(series.meta)
    meta["e"] = [1.0, 1.0]
    from ude_discover.kernels import sir_fixed_beta_curve, sir_weekly_beta_curve
    times = series.times
    weekly = np.full(20, meta["beta_hat"])
    a = sir_weekly_beta_curve(times, weekly, 0.1, 0.99, 0.01, 0.0, 1000)
    b = sir_fixed_beta_curve(times, meta["beta_hat"], 0.1, 0.99, 0.01, 0.0, 1000)
    assert np.array_equal(a, b)


def test_eoh_identity_window():
    series = gen_tau_walk_dataset(1, seed=2)[0]
    again = eoh_subsample(series, series.horizon, series.times.shape[0])
    assert np.array_equal(series.times, again.times)
    assert np.array_equal(series.states, again.states)


def test_eoh_two_points():
    series = gen_rc_dataset(RcDatasetSpec(n_instances=1), 1)[0]
    sub = eoh_subsample(series, 4.0, 2)
    assert list(sub.times) == [0.0, 4.0]


def test_eoh_bounds():
    series = gen_rc_dataset(RcDatasetSpec(n_instances=1), 1)[0]
    with pytest.raises(StructuralError):
        eoh_subsample(series, 0.0, 10)
    with pytest.raises(StructuralError):
        eoh_subsample(series, series.horizon * 2.0, 10)
    with pytest.raises(StructuralError):
        eoh_subsample(series, 1.0, 1)


def test_eoh_regenerates_not_interpolates():
    series = gen_rc_dataset(RcDatasetSpec(n_instances=1), 6)[0]
    tau = series.meta["tau"]
    sub = eoh_subsample(series, 1.5 * tau, 10)
    params = RcParams(tau, series.meta["v_s"])
    for t, v in zip(sub.times, sub.states[:, 0]):
        assert v == rc_analytic(t, params, 0.0)
    assert sub.states[-1, 0] == pytest.approx(
        (1 - math.exp(-1.5)) * series.meta["v_s"], rel=1e-12)


def test_walk_window_extends_to_reference_tau():
    series = gen_tau_walk_dataset(1, seed=9)[0]
    top = 5.0 * max_tau(series)
    sub = eoh_subsample(series, top, 10)
    assert sub.times[-1] == top
    # final voltage approaches the known source voltage
    assert sub.states[-1, 0] > 0.95
    with pytest.raises(StructuralError):
        eoh_subsample(series, top * 1.01, 10)


def test_regenerate_window_npi():
    series = gen_npi_dataset(NpiScheduleSpec(n_instances=1), 4)[0]
    sub = regenerate_window(series, 70.0, 20)
    assert sub.times[-1] == 70.0
    assert sub.states.shape == (20, 3)
    full = regenerate_window(series, 140.0, 20)
    assert np.array_equal(full.states, series.states)


def test_time_series_validation():
    with pytest.raises(StructuralError):
        TimeSeries(np.array([0.0, 1.0]), np.zeros((3, 1)))
    with pytest.raises(StructuralError):
        TimeSeries(np.array([1.0, 0.5]), np.zeros((2, 1)))
    with pytest.raises(StructuralError):
        TimeSeries(np.array([0.0, 1.0]), np.zeros((2, 1)), exog=np.zeros((2, 1)))


def test_time_series_json_round_trip():
    series = gen_npi_dataset(NpiScheduleSpec(n_instances=1), 12)[0]
    doc = series.to_json()
    back = TimeSeries.from_json(doc)
    assert np.array_equal(back.times, series.times)
    assert np.array_equal(back.states, series.states)
    assert np.array_equal(back.exog, series.exog)
