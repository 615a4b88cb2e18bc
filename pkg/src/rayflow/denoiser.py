"""Closed-form denoisers: the finite-dataset optimum and a Gaussian-mixture teacher.

A denoiser here is any callable ``f(x, t) -> eps`` where ``x`` has shape
``(n, d)`` (or ``(d,)``) and ``t`` is an integer timestep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .gaussian import DegenerateVarianceError
from .schedule import Schedule


@dataclass(frozen=True)
class FiniteDataset:
    """Paired data points and per-sample target means."""

    points: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        q = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if p.shape != q.shape or p.shape[0] < 1:
            raise ValueError(f"points {p.shape} and targets {q.shape} must match with K >= 1")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "targets", q)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussians: weights (K,), means (K, d), stds (K,)."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        s = np.broadcast_to(np.asarray(self.stds, dtype=float), w.shape).copy()
        if m.shape[0] != w.shape[0] or np.any(w <= 0) or np.any(s < 0):
            raise ValueError("malformed mixture")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng) -> np.ndarray:
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[k] + self.stds[k, None] * rng.normal((n, self.dim))


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def optimal_weights(ds: FiniteDataset, sched: Schedule, sigma: float, x_t, t: int) -> np.ndarray:
    """Softmax weights of each data pair given ``x_t``; rows sum to one."""
    ab = sched.abar(sched.check_t(t))
    var = (1.0 - ab) * sigma**2
    if var <= 0:
        raise DegenerateVarianceError("(1 - abar_t) sigma^2 must be positive")
    x, single = _as_batch(x_t)
    s = np.sqrt(ab)
    centers = s * ds.points + (1.0 - s) * ds.targets
    K = len(ds)
    w = _kernels.responsibilities(x, centers, np.full(K, var), np.zeros(K))
    return w[0] if single else w


def optimal_denoise(ds: FiniteDataset, sched: Schedule, sigma: float, x_t, t: int) -> np.ndarray:
    """Minimiser of the per-``x_t`` denoising loss over a finite dataset."""
    return optimal_weights(ds, sched, sigma, x_t, t) @ ds.targets


def denoise_loss(ds: FiniteDataset, sched: Schedule, sigma: float, x_t, t: int, eps) -> float:
    """Weighted loss sum_i w_i |eps - target_i|^2 at a single ``x_t``."""
    w = optimal_weights(ds, sched, sigma, np.asarray(x_t, dtype=float), t)
    return float(w @ np.sum((np.asarray(eps) - ds.targets) ** 2, axis=1))


def optimal_denoise_loss_stationarity(ds: FiniteDataset, sched: Schedule, sigma: float, x_t, t: int) -> float:
    """Relative gradient norm of the weighted loss at the closed-form optimum.

    The gradient 2 sum_i w_i (eps - target_i) is divided by
    ``2 * sum_i w_i * max(1, max_i |target_i|)``.
    """
    w = optimal_weights(ds, sched, sigma, np.asarray(x_t, dtype=float), t)
    eps = w @ ds.targets
    grad = 2.0 * (w[:, None] * (eps[None, :] - ds.targets)).sum(axis=0)
    scale = 2.0 * w.sum() * max(1.0, float(np.abs(ds.targets).max()))
    return float(np.linalg.norm(grad) / scale)


class OracleDenoiser:
    """Callable wrapper around :func:`optimal_denoise`."""

    def __init__(self, ds: FiniteDataset, sched: Schedule, sigma: float):
        self.ds, self.sched, self.sigma = ds, sched, sigma

    def __call__(self, x, t):
        return optimal_denoise(self.ds, self.sched, self.sigma, x, int(t))


def gmm_marginal(mix: GaussianMixture, sched: Schedule, t: int) -> GaussianMixture:
    """Mixture of x_t = sqrt(abar) x0 + sqrt(1 - abar) eps under the VP forward process."""
    ab = sched.abar(sched.check_t(t, allow_zero=True))
    stds = np.sqrt(ab * mix.stds**2 + (1.0 - ab))
    return GaussianMixture(mix.weights, np.sqrt(ab) * mix.means, stds)


def gmm_log_density(mix: GaussianMixture, x) -> np.ndarray:
    x, single = _as_batch(x)
    d = mix.dim
    var = mix.stds**2
    sq = ((x[:, None, :] - mix.means[None]) ** 2).sum(axis=2)
    logp = np.log(mix.weights)[None] - 0.5 * d * np.log(2 * np.pi * var)[None] - sq / (2 * var[None])
    top = logp.max(axis=1, keepdims=True)
    out = (top + np.log(np.exp(logp - top).sum(axis=1, keepdims=True)))[:, 0]
    return out[0] if single else out


def gmm_score(mix: GaussianMixture, x) -> np.ndarray:
    x, single = _as_batch(x)
    var = mix.stds**2
    r = _kernels.responsibilities(x, mix.means, var, np.log(mix.weights))
    out = -(r[:, :, None] * (x[:, None, :] - mix.means[None]) / var[None, :, None]).sum(axis=1)
    return out[0] if single else out


def gmm_teacher_denoise(mix: GaussianMixture, sched: Schedule, x_t, t: int) -> np.ndarray:
    """Exact E[eps | x_t] for VP diffusion of a Gaussian-mixture data law."""
    ab = sched.abar(sched.check_t(t))
    return -np.sqrt(1.0 - ab) * gmm_score(gmm_marginal(mix, sched, t), x_t)


class GMMTeacher:
    """Callable wrapper around :func:`gmm_teacher_denoise`."""

    def __init__(self, mix: GaussianMixture, sched: Schedule):
        self.mix, self.sched = mix, sched

    def __call__(self, x, t):
        return gmm_teacher_denoise(self.mix, self.sched, x, int(t))
