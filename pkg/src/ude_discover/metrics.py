"""Evaluation metrics and aggregation over repeated trials."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError


@dataclass(frozen=True)
class AggregateStats:
    mean: float
    std: float
    n: int
    min: float
    median: float
    max: float

    def __post_init__(self):
        if self.n < 1:
            raise StructuralError("aggregate needs at least one value")
        if not (self.min <= self.median <= self.max):
            raise StructuralError("order statistics out of order")


def absolute_error(estimate: float, truth: float, normalizer: float) -> float:
    """|estimate - truth| / normalizer; pass the true value to normalize."""
    if normalizer <= 0:
        raise StructuralError("normalizer must be positive")
    return abs(estimate - truth) / normalizer


def rmse(pred, truth, normalizer: float) -> float:
    """Root mean squared trajectory error over identical grids, normalized."""
    if normalizer <= 0:
        raise StructuralError("normalizer must be positive")
    pt = np.asarray(pred.times, dtype=float)
    tt = np.asarray(truth.times, dtype=float)
    if pt.shape != tt.shape or not np.array_equal(pt, tt):
        raise StructuralError("prediction and truth grids differ")
    ps = np.asarray(pred.states, dtype=float)
    ts = np.asarray(truth.states, dtype=float)
    if ps.ndim == 1:
        ps = ps[:, None]
    if ts.ndim == 1:
        ts = ts[:, None]
    if ps.shape != ts.shape:
        raise StructuralError("prediction and truth shapes differ")
    sq = np.sum((ps - ts) ** 2, axis=1)
    return float(np.sqrt(np.mean(sq))) / normalizer


def state_range(series) -> float:
    """Spread of the true curve, the normalizer used for state RMSE."""
    states = np.asarray(series.states, dtype=float)
    return float(states.max() - states.min())


def aggregate(values) -> AggregateStats:
    """Sample statistics (std with n-1 denominator; a singleton has std 0)."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise StructuralError("cannot aggregate an empty list")
    std = 0.0 if arr.size == 1 else float(np.std(arr, ddof=1))
    return AggregateStats(
        mean=float(np.mean(arr)),
        std=std,
        n=int(arr.size),
        min=float(np.min(arr)),
        median=float(np.median(arr)),
        max=float(np.max(arr)),
    )
