"""Differentiable explicit Euler integration and trajectory rollout.

Each measurement interval is split into ``iters_per_step`` equal sub-steps.
The approximator feeding the right-hand side is re-evaluated once per
measurement interval (not per sub-step), with exogenous inputs held
piecewise constant across the interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import OdeSystem, SirConstSystem
from .errors import DivergenceError, NonFiniteValueError, StructuralError


@dataclass(frozen=True)
class EulerConfig:
    """Solver accuracy knob: sub-steps per measurement interval."""

    iters_per_step: int
    step_span: float | None = None

    def __post_init__(self):
        if not isinstance(self.iters_per_step, int) or self.iters_per_step < 1:
            raise StructuralError("iters_per_step must be a positive integer")
        if self.step_span is not None and self.step_span <= 0:
            raise StructuralError("step_span must be positive")


@dataclass
class Trajectory:
    """States observed on a strictly increasing time grid."""

    times: np.ndarray
    states: object  # (n, d) float array, or per-point tuples while recording

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise StructuralError("trajectory times must be strictly increasing")
        if len(self.states) != self.times.shape[0]:
            raise StructuralError("one state per time point required")


def _check_finite(state, grid_index, substep):
    for c in state:
        if not (c > -math.inf and c < math.inf):
            raise DivergenceError(
                f"non-finite state at grid interval {grid_index}, sub-step {substep}",
                grid_index=grid_index, substep=substep)


def euler_advance(rhs, state, span, config: EulerConfig):
    """Advance ``state`` across ``span`` with iters_per_step explicit updates.

    ``rhs`` maps a state tuple to its derivative tuple. Works on floats or
    tape nodes; a non-finite intermediate aborts with the sub-step index.
    """
    if not span > 0:
        raise StructuralError("span must be positive")
    m = config.iters_per_step
    h = span / m
    state = tuple(state)
    eager = not any(hasattr(c, "tape") for c in state)
    for j in range(m):
        try:
            d = rhs(state)
            state = tuple(c + h * dc for c, dc in zip(state, d))
        except NonFiniteValueError as err:
            raise DivergenceError(
                f"non-finite state at sub-step {j} (tape position {err.position})",
                substep=j, position=err.position) from err
        if eager:
            _check_finite(state, None, j)
    return state


def rollout_scalars(system: OdeSystem, initial, spans, exog_rows, params,
                    iters: int, collect_approx: bool = False):
    """Shared rollout core over scalar-likes; returns per-point state tuples.

    ``spans`` and ``exog_rows`` may hold floats or tape nodes; the
    approximator output is computed once per interval from the interval's
    starting state.
    """
    state = tuple(initial)
    states = [state]
    approx_outs = []
    eager = not any(hasattr(c, "tape") for c in tuple(params) + state)
    for k in range(len(spans)):
        exog = exog_rows[k] if exog_rows is not None else ()
        inputs = system.approx_inputs(state, exog)
        out = system.approx.apply(params, inputs)
        if collect_approx:
            approx_outs.append(out)
        span = spans[k]
        m = iters
        h = span / m
        for j in range(m):
            try:
                d = system.rhs(state, out)
                state = tuple(c + h * dc for c, dc in zip(state, d))
            except NonFiniteValueError as err:
                raise DivergenceError(
                    f"non-finite state at grid interval {k}, sub-step {j}",
                    grid_index=k, substep=j, position=err.position) from err
            if eager:
                _check_finite(state, k, j)
        states.append(state)
    return states, approx_outs


def rollout(system: OdeSystem, initial, grid, config: EulerConfig,
            exogenous=None, params=None, collect_approx=False) -> Trajectory:
    """Roll the system over a measurement grid from the given initial state.

    The result feeds each predicted state into the next interval; exogenous
    rows (one per interval) are held constant within their interval.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 2 or np.any(np.diff(grid) <= 0):
        raise StructuralError("grid must be strictly increasing with >= 2 points")
    if params is None:
        params = system.approx.params
    if exogenous is not None:
        exogenous = np.asarray(exogenous, dtype=float)
        if exogenous.shape[0] != grid.shape[0] - 1:
            raise StructuralError("need one exogenous row per grid interval")
    elif system.exog_dim:
        raise StructuralError("system expects exogenous inputs aligned to the grid")

    params_arr = np.asarray(params, dtype=float)
    if (isinstance(system, SirConstSystem) and not collect_approx
            and params_arr.ndim == 1):
        # Same stepping as the generic path, specialized for speed at high
        # sub-step counts.
        beta = system.approx.apply(params_arr, ())[0]
        states = kernels.sir_fixed_beta_curve(
            grid, float(beta), system.gamma,
            float(initial[0]), float(initial[1]), float(initial[2]),
            config.iters_per_step)
        if not np.all(np.isfinite(states)):
            bad = int(np.argwhere(~np.isfinite(states).all(axis=1))[0][0])
            raise DivergenceError(f"non-finite state at grid point {bad}",
                                  grid_index=bad)
        return Trajectory(grid, states)

    spans = [float(s) for s in np.diff(grid)]
    exog_rows = None
    if exogenous is not None:
        exog_rows = [tuple(float(v) for v in row) for row in exogenous]
    init = tuple(float(v) for v in initial)
    states, outs = rollout_scalars(system, init, spans, exog_rows,
                                   [float(v) for v in params_arr],
                                   config.iters_per_step, collect_approx)
    arr = np.array([[float(c) for c in st] for st in states])
    traj = Trajectory(grid, arr)
    if collect_approx:
        traj.approx_outputs = np.array([[float(v) for v in o] for o in outs])
    return traj
