"""Sample-quality metrics on small point clouds."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .. import _kernels

W2_MAX_POINTS = 512


@dataclass(frozen=True)
class MetricReport:
    dataset: str
    K: int
    time_sampler: str
    seed: int
    w2: float
    mmd: float
    n_samples: int
    n_reference: int

    def to_dict(self) -> dict:
        return asdict(self)


def _points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected an (n, d) point set, got shape {a.shape}")
    return a


def wasserstein2(a, b) -> float:
    """Exact W2 between two equal-size empirical clouds via optimal assignment."""
    a, b = _points(a), _points(b)
    if a.shape != b.shape:
        raise ValueError(f"point sets differ in shape: {a.shape} vs {b.shape}")
    if a.shape[0] > W2_MAX_POINTS:
        raise ValueError(f"exact assignment is capped at {W2_MAX_POINTS} points, got {a.shape[0]}")
    cost = cdist(a, b, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))


def median_bandwidth(a, b) -> float:
    d = pdist(np.concatenate([_points(a), _points(b)]))
    h = float(np.median(d[d > 0])) if np.any(d > 0) else 1.0
    return h


def mmd(a, b, bandwidth: float | None = None) -> float:
    """Biased squared MMD with a Gaussian kernel (median heuristic by default)."""
    a, b = _points(a), _points(b)
    h = median_bandwidth(a, b) if bandwidth is None else bandwidth
    return _kernels.rbf_mean(a, a, h) + _kernels.rbf_mean(b, b, h) - 2.0 * _kernels.rbf_mean(a, b, h)
