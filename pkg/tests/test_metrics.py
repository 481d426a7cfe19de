import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ude_discover.datagen import TimeSeries
from ude_discover.errors import StructuralError
from ude_discover.integrate import Trajectory
from ude_discover.metrics import (AggregateStats, absolute_error, aggregate,
                                  rmse, state_range)


def test_absolute_error_values():
    assert absolute_error(0.3, 0.3, 0.3) == 0.0
    assert absolute_error(0.31, 0.30, 0.30) == pytest.approx(0.0333333333, rel=1e-8)
    assert absolute_error(4.5, 4.0, 4.0) == pytest.approx(0.125, rel=1e-12)
    with pytest.raises(StructuralError):
        absolute_error(1.0, 1.0, 0.0)


def _traj(times, values):
    return Trajectory(np.asarray(times, dtype=float), np.asarray(values, dtype=float))


def _series(times, values):
    return TimeSeries(np.asarray(times, dtype=float), np.asarray(values, dtype=float))


def test_rmse_values():
    t = [0.0, 1.0]
    assert rmse(_traj(t, [[1.0], [2.0]]), _series(t, [[1.0], [2.0]]), 1.0) == 0.0
    # residuals 3 and 4 over two points
    val = rmse(_traj(t, [[3.0], [4.0]]), _series(t, [[0.0], [0.0]]), 1.0)
    assert val == pytest.approx(math.sqrt(12.5), rel=1e-12)
    # constant residual
    val = rmse(_traj(t, [[1.5], [2.5]]), _series(t, [[1.0], [2.0]]), 2.0)
    assert val == pytest.approx(0.25, rel=1e-12)


def test_rmse_grid_mismatch():
    with pytest.raises(StructuralError):
        rmse(_traj([0.0, 1.0], [[1.0], [2.0]]),
             _series([0.0, 2.0], [[1.0], [2.0]]), 1.0)


def test_rmse_rescaling_invariance():
    rng = np.random.default_rng(3)
    t = np.arange(5.0)
    pred = rng.uniform(0, 2, size=(5, 2))
    truth = rng.uniform(0, 2, size=(5, 2))
    base = rmse(_traj(t, pred), _series(t, truth), 2.0)
    for c in (0.5, 3.0, 17.0):
        scaled = rmse(_traj(t, c * pred), _series(t, c * truth), 2.0 * c)
        assert scaled == pytest.approx(base, rel=1e-12)


def test_aggregate_values():
    s = aggregate([5.0])
    assert s.mean == 5.0 and s.std == 0.0 and s.n == 1
    s = aggregate([1.0, 2.0, 3.0])
    assert s.mean == 2.0 and s.std == pytest.approx(1.0, rel=1e-12)
    assert s.min == 1.0 and s.median == 2.0 and s.max == 3.0
    s = aggregate([4.0, 4.0, 4.0])
    assert s.std == 0.0
    with pytest.raises(StructuralError):
        aggregate([])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30))
def test_aggregate_mean_within_bounds(values):
    s = aggregate(values)
    assert s.min - 1e-9 <= s.mean <= s.max + 1e-9
    assert s.min <= s.median <= s.max
    assert s.std >= 0.0


def test_aggregate_stats_validation():
    with pytest.raises(StructuralError):
        AggregateStats(mean=0.0, std=0.0, n=0, min=0.0, median=0.0, max=0.0)
    with pytest.raises(StructuralError):
        AggregateStats(mean=0.0, std=0.0, n=2, min=1.0, median=0.0, max=2.0)


def test_state_range():
    series = _series([0.0, 1.0, 2.0], [[0.0], [3.0], [9.0]])
    assert state_range(series) == 9.0
