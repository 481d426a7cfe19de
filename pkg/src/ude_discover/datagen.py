"""Synthetic ground-truth generation for both case studies.

Charging curves with constant parameters come from the closed-form
solution; every other dataset is produced by high-resolution Euler
integration (10,000 sub-steps per measurement interval by default).
Generation is deterministic: instance k of a dataset draws from a generator
seeded with (seed, k), so datasets can be regenerated from their metadata.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import NpiEffect, NpiVector, RcParams, beta_npi
from .errors import StructuralError

ORACLE_ITERS = 10_000


@dataclass
class TimeSeries:
    """Ordered (time, state-vector) measurements, the dataset unit.

    ``exog`` holds one row of exogenous inputs per interval (or None);
    ``meta`` records the generating parameters so any window of the series
    can be regenerated rather than interpolated.
    """

    times: np.ndarray
    states: np.ndarray
    exog: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.times.ndim != 1 or self.times.shape[0] != self.states.shape[0]:
            raise StructuralError("times and states must align")
        if np.any(np.diff(self.times) <= 0):
            raise StructuralError("times must be strictly increasing")
        if self.exog is not None:
            self.exog = np.asarray(self.exog, dtype=float)
            if self.exog.ndim == 1:
                self.exog = self.exog[:, None]
            if self.exog.shape[0] != self.times.shape[0] - 1:
                raise StructuralError("need one exogenous row per interval")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_json(self) -> dict:
        doc = {
            "true_params": {k: v for k, v in self.meta.items()},
            "times": [float(t) for t in self.times],
            "states": [[float(v) for v in row] for row in self.states],
            "exogenous": None if self.exog is None
            else [[float(v) for v in row] for row in self.exog],
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TimeSeries":
        return cls(np.array(doc["times"]), np.array(doc["states"]),
                   None if doc["exogenous"] is None else np.array(doc["exogenous"]),
                   dict(doc["true_params"]))


@dataclass(frozen=True)
class RcDatasetSpec:
    n_instances: int = 100
    v_s_range: tuple = (5.0, 10.0)
    tau_range: tuple = (2.0, 6.0)
    n_points: int = 10
    horizon_factor: float = 5.0
    v0: float = 0.0

    def __post_init__(self):
        if self.n_points < 2 or self.horizon_factor <= 0:
            raise StructuralError("need >= 2 points and a positive horizon factor")
        if self.v_s_range[0] > self.v_s_range[1] or self.tau_range[0] > self.tau_range[1]:
            raise StructuralError("empty sampling range")


@dataclass(frozen=True)
class SirDatasetSpec:
    n_instances: int = 100
    beta_range: tuple = (0.2, 0.4)
    gamma: float = 0.1
    s0: float = 0.99
    i0: float = 0.01
    days: int = 100
    oracle_iters: int = ORACLE_ITERS

    def __post_init__(self):
        if self.s0 + self.i0 > 1.0:
            raise StructuralError("initial fractions exceed the population")
        if self.oracle_iters < 1:
            raise StructuralError("oracle_iters must be >= 1")


@dataclass(frozen=True)
class ObservableWalk:
    """Nondecreasing observable driving a time-varying tau = a * x."""

    x: tuple
    a: float

    def __post_init__(self):
        if self.x[0] != 1.0:
            raise StructuralError("walk must start at 1")
        steps = np.diff(np.asarray(self.x))
        if np.any(steps < 0) or np.any(steps > 1):
            raise StructuralError("walk increments must lie in [0, 1]")


@dataclass(frozen=True)
class NpiScheduleSpec:
    n_instances: int = 100
    beta_hat_range: tuple = (0.2, 0.4)
    gamma: float = 0.1
    s0: float = 0.99
    i0: float = 0.01
    horizon_days: float = 140.0
    n_points: int = 20
    oracle_iters: int = ORACLE_ITERS

    @property
    def n_weeks(self) -> int:
        return int(math.ceil(self.horizon_days / 7.0))


def rc_analytic(t: float, params: RcParams, v0: float) -> float:
    """Closed-form charging voltage at time t."""
    if t < 0:
        raise StructuralError("time must be nonnegative")
    return (v0 - params.v_s) * math.exp(-t / params.tau) + params.v_s


def _instance_rng(seed, index: int) -> np.random.Generator:
    return np.random.default_rng((seed, index))


def gen_rc_dataset(spec: RcDatasetSpec, seed) -> list[TimeSeries]:
    """Charging curves sampled from the closed form on [0, horizon_factor*tau]."""
    out = []
    for k in range(spec.n_instances):
        rng = _instance_rng(seed, k)
        v_s = rng.uniform(*spec.v_s_range)
        tau = rng.uniform(*spec.tau_range)
        times = np.linspace(0.0, spec.horizon_factor * tau, spec.n_points)
        params = RcParams(tau, v_s)
        states = np.array([[rc_analytic(t, params, spec.v0)] for t in times])
        out.append(TimeSeries(times, states, None, {
            "case": "rc-const", "tau": tau, "v_s": v_s, "v0": spec.v0,
            "horizon_factor": spec.horizon_factor,
        }))
    return out


def gen_sir_dataset(spec: SirDatasetSpec, seed) -> list[TimeSeries]:
    """Daily epidemic curves, one sampled infection rate per instance."""
    out = []
    times = np.arange(spec.days + 1, dtype=float)
    r0 = 1.0 - spec.s0 - spec.i0
    for k in range(spec.n_instances):
        rng = _instance_rng(seed, k)
        beta = rng.uniform(*spec.beta_range)
        states = kernels.sir_fixed_beta_curve(times, beta, spec.gamma,
                                              spec.s0, spec.i0, r0,
                                              spec.oracle_iters)
        if not np.all(np.isfinite(states)):
            raise StructuralError(f"generator diverged for beta={beta}")
        out.append(TimeSeries(times, states, None, {
            "case": "sir-const", "beta": beta, "gamma": spec.gamma,
            "s0": spec.s0, "i0": spec.i0, "oracle_iters": spec.oracle_iters,
        }))
    return out


def _walk_curve(walk: ObservableWalk, times: np.ndarray, v_s: float,
                iters: int) -> np.ndarray:
    x = np.asarray(walk.x)
    n_int = times.shape[0] - 1
    if n_int > x.shape[0]:
        raise StructuralError("walk shorter than the requested grid")
    taus = walk.a * x[:n_int]
    return kernels.rc_piecewise_tau_curve(times, taus, v_s, 0.0, iters)


def gen_tau_walk_dataset(n_instances: int, a_range=(2.0, 6.0),
                         n_steps: int = 10, seed=0,
                         oracle_iters: int = ORACLE_ITERS) -> list[TimeSeries]:
    """Charging curves whose time constant follows a * x(t) along a random walk.

    ``n_steps`` measurement points sit at unit spacing; the observable is
    updated at each measurement step and tau is held constant within each
    interval. The source voltage is known and equal to 1.
    """
    if n_steps < 2:
        raise StructuralError("need at least two measurement steps")
    out = []
    for k in range(n_instances):
        rng = _instance_rng(seed, k)
        a = rng.uniform(*a_range)
        eps = rng.uniform(0.0, 1.0, size=n_steps - 1)
        x = np.concatenate([[1.0], 1.0 + np.cumsum(eps)])
        walk = ObservableWalk(tuple(float(v) for v in x), float(a))
        times = np.arange(n_steps, dtype=float)
        states = _walk_curve(walk, times, 1.0, oracle_iters)
        out.append(TimeSeries(times, states, x[:-1].reshape(-1, 1), {
            "case": "rc-walk", "a": float(a), "x": [float(v) for v in x],
            "v_s": 1.0, "oracle_iters": oracle_iters,
        }))
    return out


def _weekly_beta(meta) -> np.ndarray:
    effect = NpiEffect((meta["e"][0], meta["e"][1]), meta["beta_hat"])
    return np.array([beta_npi(NpiVector((int(x1), int(x2))), effect)
                     for x1, x2 in meta["npis"]])


def _npi_exog(times: np.ndarray, npis) -> np.ndarray:
    rows = []
    n_weeks = len(npis)
    for t in times[:-1]:
        w = min(int(t // 7.0), n_weeks - 1)
        rows.append([float(npis[w][0]), float(npis[w][1])])
    return np.array(rows)


def gen_npi_dataset(spec: NpiScheduleSpec, seed) -> list[TimeSeries]:
    """Epidemic curves whose infection rate is reduced by weekly interventions.

    Per instance: an inherent rate and two effect factors are drawn, the
    intervention pair flips randomly every week, and the curve is sampled at
    n_points equally spaced times across the horizon.
    """
    out = []
    times = np.linspace(0.0, spec.horizon_days, spec.n_points)
    r0 = 1.0 - spec.s0 - spec.i0
    for k in range(spec.n_instances):
        rng = _instance_rng(seed, k)
        beta_hat = rng.uniform(*spec.beta_hat_range)
        e = rng.uniform(0.0, 1.0, size=2)
        npis = rng.integers(0, 2, size=(spec.n_weeks, 2))
        meta = {
            "case": "sir-npi", "beta_hat": float(beta_hat),
            "e": [float(v) for v in e],
            "npis": [[int(a), int(b)] for a, b in npis],
            "gamma": spec.gamma, "s0": spec.s0, "i0": spec.i0,
            "horizon_days": spec.horizon_days,
            "oracle_iters": spec.oracle_iters,
        }
        weekly = _weekly_beta(meta)
        states = kernels.sir_weekly_beta_curve(times, weekly, spec.gamma,
                                               spec.s0, spec.i0, r0,
                                               spec.oracle_iters)
        out.append(TimeSeries(times, states, _npi_exog(times, meta["npis"]), meta))
    return out


def true_beta_series(series: TimeSeries, times=None) -> np.ndarray:
    """Ground-truth infection rate at each interval start of an NPI series."""
    meta = series.meta
    if meta.get("case") != "sir-npi":
        raise StructuralError("series was not produced by the NPI generator")
    if times is None:
        times = series.times
    weekly = _weekly_beta(meta)
    n_weeks = weekly.shape[0]
    return np.array([weekly[min(int(t // 7.0), n_weeks - 1)] for t in times[:-1]])


def regenerate_window(series: TimeSeries, t_end: float, n_points: int) -> TimeSeries:
    """Re-run the series' own generator on n_points over [0, t_end]."""
    meta = series.meta
    case = meta.get("case")
    times = np.linspace(0.0, t_end, n_points)
    if case == "rc-const":
        params = RcParams(meta["tau"], meta["v_s"])
        states = np.array([[rc_analytic(t, params, meta["v0"])] for t in times])
        return TimeSeries(times, states, None, dict(meta))
    if case == "rc-walk":
        walk = ObservableWalk(tuple(meta["x"]), meta["a"])
        states = _walk_curve(walk, times, meta["v_s"], meta["oracle_iters"])
        x = np.asarray(meta["x"])[:n_points - 1]
        return TimeSeries(times, states, x.reshape(-1, 1), dict(meta))
    if case == "sir-const":
        r0 = 1.0 - meta["s0"] - meta["i0"]
        states = kernels.sir_fixed_beta_curve(times, meta["beta"], meta["gamma"],
                                              meta["s0"], meta["i0"], r0,
                                              meta["oracle_iters"])
        return TimeSeries(times, states, None, dict(meta))
    if case == "sir-npi":
        r0 = 1.0 - meta["s0"] - meta["i0"]
        weekly = _weekly_beta(meta)
        states = kernels.sir_weekly_beta_curve(times, weekly, meta["gamma"],
                                               meta["s0"], meta["i0"], r0,
                                               meta["oracle_iters"])
        return TimeSeries(times, states, _npi_exog(times, meta["npis"]), dict(meta))
    raise StructuralError(f"cannot regenerate series of case {case!r}")


def max_tau(series: TimeSeries) -> float:
    """Largest time constant along a walk-driven series, the window reference."""
    meta = series.meta
    if meta.get("case") != "rc-walk":
        raise StructuralError("max_tau applies to walk-driven series")
    return float(meta["a"] * max(meta["x"]))


def eoh_subsample(series: TimeSeries, eoh: float, n_points: int) -> TimeSeries:
    """Resample n_points equally spaced on [0, eoh], regenerated exactly.

    The window must stay within the regenerable horizon: the series' own
    horizon for fixed-parameter data, or horizon_factor * max(tau) for
    walk-driven data whose sweep windows extend past the unit grid.
    """
    if n_points < 2:
        raise StructuralError("need at least two sample points")
    case = series.meta.get("case")
    if case == "rc-walk":
        limit = 5.0 * max_tau(series)
    elif case == "rc-const":
        limit = series.meta["horizon_factor"] * series.meta["tau"]
    else:
        limit = series.horizon
    if not 0.0 < eoh <= limit * (1.0 + 1e-12):
        raise StructuralError(
            f"end of horizon {eoh} outside the regenerable window (0, {limit}]")
    return regenerate_window(series, float(eoh), n_points)


def dataset_to_json(instances: list[TimeSeries], spec, seed) -> str:
    """Canonical JSON for a generated dataset (stable across runs)."""
    if hasattr(spec, "__dataclass_fields__"):
        spec_doc = {k: getattr(spec, k) for k in spec.__dataclass_fields__}
    else:
        spec_doc = dict(spec)
    doc = {
        "spec": spec_doc,
        "seed": seed,
        "instances": [s.to_json() for s in instances],
    }
    return json.dumps(doc, sort_keys=True)


def dataset_sha256(instances: list[TimeSeries], spec, seed) -> str:
    return hashlib.sha256(dataset_to_json(instances, spec, seed).encode()).hexdigest()
