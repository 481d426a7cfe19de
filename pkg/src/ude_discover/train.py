"""Training procedures: whole-series and per-pair gradient descent.

Both regimes record the cost computation once per trial as a tape and then
replay it each epoch with updated parameters, so the per-epoch work is a
pair of array sweeps plus an optimizer update. Recorded graphs depend only
on dataset shape and solver configuration, never on the measured values
(those are rebindable data leaves), so structurally identical trials share
one recording.

Full-batch: one rollout over the whole series from the first measurement,
one update per epoch. Mini-batch: every consecutive measurement pair is its
own initial value problem; one update per pair, pairs shuffled each epoch.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .datagen import TimeSeries
from .dynamics import OdeSystem
from .errors import DivergenceError, StructuralError
from .integrate import EulerConfig, Trajectory, rollout, rollout_scalars
from .tape import Tape

_REGIMES = ("full-batch", "mini-batch")
_OPTIMIZERS = ("adam", "sgd")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    regime: str = "mini-batch"
    optimizer: str = "adam"
    learning_rate: float = 0.05
    max_epochs: int = 2000
    convergence_tol: float = 1e-7
    patience: int = 20
    euler: EulerConfig = field(default_factory=lambda: EulerConfig(10))
    seed: object = 0
    shuffle_pairs: bool = True
    track_params: bool = False

    def __post_init__(self):
        if self.regime not in _REGIMES:
            raise StructuralError(f"regime must be one of {_REGIMES}")
        if self.optimizer not in _OPTIMIZERS:
            raise StructuralError(f"optimizer must be one of {_OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise StructuralError("learning rate must be positive")
        if self.max_epochs < 1:
            raise StructuralError("max_epochs must be at least 1")
        if self.convergence_tol < 0:
            raise StructuralError("convergence_tol must be nonnegative")
        if self.patience < 1:
            raise StructuralError("patience must be at least 1")


@dataclass(frozen=True)
class Pair:
    """One consecutive-measurement initial value problem."""

    t_i: float
    t_ip1: float
    y_i: tuple
    y_ip1: tuple
    exogenous_i: tuple | None = None

    def __post_init__(self):
        if not self.t_ip1 > self.t_i:
            raise StructuralError("pair endpoints must be increasing in time")


@dataclass
class FitReport:
    """Outcome of one training run."""

    estimated_params: np.ndarray
    cost_history: list
    wall_time_s: float
    epochs_run: int
    converged: bool
    param_history: list | None = None

    def __post_init__(self):
        if self.wall_time_s < 0:
            raise StructuralError("wall time cannot be negative")
        if not np.all(np.isfinite(self.cost_history)):
            raise StructuralError("cost history must be finite")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def _sum_sq_cost(pred_states, target_states):
    """Sum over points of the squared Euclidean residual.

    Accumulates left to right, per point then across points, on whatever
    scalar type it is given; the recorded and eager paths therefore produce
    bit-identical values.
    """
    total = 0.0
    for ps, ys in zip(pred_states, target_states):
        sq = 0.0
        for p_c, y_c in zip(ps, ys):
            r = p_c - y_c
            sq = sq + r * r
        total = total + sq
    return total


def mse_cost(pred: Trajectory, measured: TimeSeries):
    """Sum of squared distances between predicted and measured states."""
    pt = np.asarray(pred.times, dtype=float)
    if pt.shape != measured.times.shape or not np.array_equal(pt, measured.times):
        raise StructuralError("prediction and measurement grids differ")
    target = [tuple(float(v) for v in row) for row in measured.states]
    pred_states = pred.states
    if isinstance(pred_states, np.ndarray):
        pred_states = [tuple(float(v) for v in row) for row in pred_states]
    if len(pred_states) != len(target):
        raise StructuralError("prediction and measurement lengths differ")
    return _sum_sq_cost(pred_states, target)


def split_pairs(series: TimeSeries) -> list[Pair]:
    """All consecutive measurement pairs, in order, with interval inputs."""
    if series.times.shape[0] < 2:
        raise StructuralError("need at least two measurements to form pairs")
    pairs = []
    for k in range(series.times.shape[0] - 1):
        exog = None
        if series.exog is not None:
            exog = tuple(float(v) for v in series.exog[k])
        pairs.append(Pair(
            float(series.times[k]), float(series.times[k + 1]),
            tuple(float(v) for v in series.states[k]),
            tuple(float(v) for v in series.states[k + 1]),
            exog))
    return pairs


def adam_step(params, grads, state: AdamState | None = None,
              lr: float = 0.001, betas=ADAM_BETAS, eps: float = ADAM_EPS):
    """One bias-corrected moment update; returns (new params, new state)."""
    params = np.asarray(params, dtype=float).copy()
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise StructuralError("gradient and parameter shapes differ")
    if state is None:
        state = AdamState(np.zeros_like(params), np.zeros_like(params), 0)
    m = state.m.copy()
    v = state.v.copy()
    t = state.t + 1
    kernels.adam_apply(params, grads, m, v, t, lr, betas[0], betas[1], eps)
    return params, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Graph recording and the per-shape cache
# ---------------------------------------------------------------------------


@dataclass
class _FitGraph:
    ops: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    aux: np.ndarray
    trace_values: np.ndarray
    input_pos: np.ndarray
    n_params: int
    # full-batch
    out_idx: int = -1
    param_pos: np.ndarray | None = None
    # mini-batch
    starts: np.ndarray | None = None
    ends: np.ndarray | None = None
    outs: np.ndarray | None = None
    leaf_rows: np.ndarray | None = None

    def new_buffers(self):
        n = self.ops.shape[0]
        return self.trace_values.copy(), np.empty(n), np.empty(n), np.empty(n)


_GRAPH_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def clear_graph_cache():
    with _CACHE_LOCK:
        _GRAPH_CACHE.clear()


def _pack_inputs(data: TimeSeries) -> np.ndarray:
    parts = [np.diff(data.times), data.states.ravel()]
    if data.exog is not None:
        parts.append(data.exog.ravel())
    return np.concatenate(parts)


def _trace_common(system: OdeSystem, data: TimeSeries):
    tape = Tape()
    span_nodes = [tape.input(float(s)) for s in np.diff(data.times)]
    y_nodes = [tuple(tape.input(float(v)) for v in row) for row in data.states]
    exog_nodes = None
    if data.exog is not None:
        exog_nodes = [tuple(tape.input(float(v)) for v in row) for row in data.exog]
    elif system.exog_dim:
        raise StructuralError("system expects exogenous inputs on the series")
    return tape, span_nodes, y_nodes, exog_nodes


def _trace_full(system: OdeSystem, data: TimeSeries, iters: int) -> _FitGraph:
    tape, span_nodes, y_nodes, exog_nodes = _trace_common(system, data)
    theta = [tape.leaf(float(p)) for p in system.approx.params]
    states, _ = rollout_scalars(system, y_nodes[0], span_nodes, exog_nodes,
                                theta, iters)
    cost = _sum_sq_cost(states, y_nodes)
    compiled = tape.compile(cost)
    return _FitGraph(compiled.ops, compiled.pa, compiled.pb, compiled.aux,
                     compiled.trace_values, compiled.input_pos,
                     n_params=len(theta), out_idx=compiled.out_idx,
                     param_pos=compiled.param_pos)


def _trace_pairs(system: OdeSystem, data: TimeSeries, iters: int) -> _FitGraph:
    tape, span_nodes, y_nodes, exog_nodes = _trace_common(system, data)
    starts, ends, outs, leaf_rows = [], [], [], []
    n_params = system.approx.params.size
    for p in range(len(span_nodes)):
        start = len(tape)
        theta = [tape.leaf(float(v)) for v in system.approx.params]
        exog = [exog_nodes[p]] if exog_nodes is not None else None
        states, _ = rollout_scalars(system, y_nodes[p], [span_nodes[p]],
                                    exog, theta, iters)
        cost = _sum_sq_cost([states[-1]], [y_nodes[p + 1]])
        starts.append(start)
        ends.append(len(tape))
        outs.append(cost.idx)
        leaf_rows.append([th.idx for th in theta])
    compiled = tape.compile()
    return _FitGraph(compiled.ops, compiled.pa, compiled.pb, compiled.aux,
                     compiled.trace_values, compiled.input_pos,
                     n_params=n_params,
                     starts=np.array(starts, dtype=np.int32),
                     ends=np.array(ends, dtype=np.int32),
                     outs=np.array(outs, dtype=np.int32),
                     leaf_rows=np.array(leaf_rows, dtype=np.int32))


def _graph_key(system, data, iters, regime):
    exog_dim = data.exog.shape[1] if data.exog is not None else 0
    return (system.cache_key(), regime, data.times.shape[0],
            data.states.shape[1], exog_dim, iters)


def _get_graph(system, data, iters, regime) -> _FitGraph:
    key = _graph_key(system, data, iters, regime)
    with _CACHE_LOCK:
        graph = _GRAPH_CACHE.get(key)
    if graph is not None:
        return graph
    if regime == "full-batch":
        graph = _trace_full(system, data, iters)
    else:
        graph = _trace_pairs(system, data, iters)
    with _CACHE_LOCK:
        _GRAPH_CACHE.setdefault(key, graph)
        return _GRAPH_CACHE[key]


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _fit(system: OdeSystem, data: TimeSeries, config: TrainConfig,
         regime: str) -> FitReport:
    kernels.warmup()
    iters = config.euler.iters_per_step
    graph = _get_graph(system, data, iters, regime)
    opt = kernels.OPT_ADAM if config.optimizer == "adam" else kernels.OPT_SGD
    lr = config.learning_rate
    b1, b2 = ADAM_BETAS

    start_time = time.perf_counter()
    values, la, lb, adj = graph.new_buffers()
    values[graph.input_pos] = _pack_inputs(data)
    params = np.array(system.approx.params, dtype=float)
    grads = np.empty_like(params)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    step = 0
    rng = np.random.default_rng(config.seed)
    n_pairs = 0 if graph.starts is None else graph.starts.shape[0]
    natural_order = np.arange(n_pairs, dtype=np.int32)

    history: list[float] = []
    param_history = [params.copy()] if config.track_params else None
    best_cost = None
    stall = 0
    converged = False

    for epoch in range(config.max_epochs):
        if regime == "full-batch":
            cost, bad, step = kernels.run_epoch_full(
                graph.ops, graph.pa, graph.pb, graph.aux, values, la, lb, adj,
                graph.param_pos, graph.out_idx, params, grads, m, v, step,
                lr, b1, b2, ADAM_EPS, opt, True)
        else:
            if config.shuffle_pairs:
                order = rng.permutation(n_pairs).astype(np.int32)
            else:
                order = natural_order
            cost, bad, step = kernels.run_epoch_pairs(
                graph.ops, graph.pa, graph.pb, graph.aux, values, la, lb, adj,
                graph.starts, graph.ends, graph.outs, graph.leaf_rows, order,
                params, grads, m, v, step, lr, b1, b2, ADAM_EPS, opt, True)
        if bad >= 0:
            raise DivergenceError(
                f"training diverged at epoch {epoch} (tape position {bad})",
                position=int(bad))
        cost = float(cost)
        history.append(cost)
        if param_history is not None:
            param_history.append(params.copy())
        # Improvement is judged against the best cost seen so far, so the
        # oscillation of per-pair updates around the optimum cannot keep
        # resetting the patience counter.
        if best_cost is None:
            best_cost = cost
        else:
            denom = abs(best_cost) if best_cost != 0.0 else 1.0
            improvement = (best_cost - cost) / denom
            if improvement < config.convergence_tol:
                stall += 1
            else:
                stall = 0
            if cost < best_cost:
                best_cost = cost
            if stall >= config.patience:
                converged = True
                break
    wall = time.perf_counter() - start_time

    system.approx.params = params
    return FitReport(estimated_params=params.copy(), cost_history=history,
                     wall_time_s=wall, epochs_run=len(history),
                     converged=converged, param_history=param_history)


def fit_full_batch(system: OdeSystem, data: TimeSeries,
                   config: TrainConfig) -> FitReport:
    """Whole-series training: one rollout and one update per epoch.

    Requires ordered, uniformly spaced measurements.
    """
    if data.times.shape[0] < 2:
        raise StructuralError("need at least two measurements")
    spans = np.diff(data.times)
    if not np.allclose(spans, spans[0], rtol=1e-9, atol=0.0):
        raise StructuralError("full-batch training needs uniformly spaced data")
    return _fit(system, data, config, "full-batch")


def fit_mini_batch(system: OdeSystem, data: TimeSeries,
                   config: TrainConfig) -> FitReport:
    """Per-pair training: each consecutive pair is its own initial value
    problem and triggers one optimizer update."""
    if data.times.shape[0] < 2:
        raise StructuralError("need at least two measurements")
    return _fit(system, data, config, "mini-batch")


def fit(system: OdeSystem, data: TimeSeries, config: TrainConfig) -> FitReport:
    if config.regime == "full-batch":
        return fit_full_batch(system, data, config)
    return fit_mini_batch(system, data, config)


def rollout_eval(system: OdeSystem, fitted, data: TimeSeries,
                 config: EulerConfig) -> Trajectory:
    """Forecast the whole series from the first measurement only.

    Every predicted state feeds the next interval (no teacher forcing), so
    both training regimes are judged on the same footing.
    """
    params = (fitted if fitted is not None else system.approx).params
    return rollout(system, data.states[0], data.times, config,
                   exogenous=data.exog, params=params)


def one_step_predictions(system: OdeSystem, data: TimeSeries,
                         config: EulerConfig, params=None):
    """Teacher-forced one-step predictions and their per-pair costs.

    Integrates each pair from its measured start at fixed parameters;
    returns the concatenated trajectory and the list of pair costs.
    """
    if params is None:
        params = system.approx.params
    params = [float(p) for p in np.asarray(params, dtype=float)]
    preds = [tuple(float(v) for v in data.states[0])]
    pair_costs = []
    for pair in split_pairs(data):
        exog = [pair.exogenous_i] if pair.exogenous_i is not None else None
        states, _ = rollout_scalars(system, pair.y_i,
                                    [pair.t_ip1 - pair.t_i], exog, params,
                                    config.iters_per_step)
        end = states[-1]
        preds.append(tuple(float(c) for c in end))
        pair_costs.append(float(_sum_sq_cost([end], [pair.y_ip1])))
    traj = Trajectory(data.times, np.array(preds))
    return traj, pair_costs
