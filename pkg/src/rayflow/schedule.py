"""Noise schedules and the three trajectory families (RayFlow, VP, RF)."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    """Invalid schedule parameters or out-of-range timestep."""


class TrajectoryKind(str, enum.Enum):
    RAYFLOW = "rayflow"
    VP = "vp"
    RF = "rf"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Schedule:
    """Per-step coefficients of a T-step chain.

    Arrays are indexed ``t - 1`` for ``t = 1..T``.  ``alpha_bar`` is the
    cumulative product of ``alpha**2``; ``alpha_bar(0)`` is taken as 1 so the
    first backward step is deterministic (``beta_tilde[0] == 0``).
    """

    alpha: np.ndarray
    beta: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    @property
    def T(self) -> int:
        return int(self.alpha.shape[0])

    def check_t(self, t, allow_zero: bool = False) -> int:
        lo = 0 if allow_zero else 1
        if int(t) != t or not lo <= t <= self.T:
            raise ScheduleError(f"timestep {t!r} outside [{lo}, {self.T}]")
        return int(t)

    def abar(self, t: int) -> float:
        """``alpha_bar`` at integer ``t`` with the ``alpha_bar(0) = 1`` convention."""
        t = self.check_t(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def a(self, t: int) -> float:
        return float(self.alpha[self.check_t(t) - 1])

    def btilde(self, t: int) -> float:
        return float(self.beta_tilde[self.check_t(t) - 1])

    def abar_continuous(self, t) -> np.ndarray:
        """Piecewise-linear ``alpha_bar`` on ``[0, T]`` (for continuous particle times)."""
        grid = np.arange(self.T + 1, dtype=float)
        return np.interp(t, grid, np.concatenate([[1.0], self.alpha_bar]))


def from_betas(beta: np.ndarray) -> Schedule:
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size < 1:
        raise ScheduleError("beta must be a non-empty vector")
    if not np.all((beta > 0) & (beta < 1)):
        raise ScheduleError("every beta_t must lie in (0, 1)")
    alpha = np.sqrt(1.0 - beta**2)
    alpha_bar = np.cumprod(alpha**2)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha**2) * (1.0 - prev) / (1.0 - alpha_bar)
    return Schedule(_frozen(alpha), _frozen(beta), _frozen(alpha_bar), _frozen(beta_tilde))


def make_linear_schedule(T: int, beta_min: float, beta_max: float) -> Schedule:
    """Schedule with ``beta_t**2`` linear between ``beta_min**2`` and ``beta_max**2``."""
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    beta = np.sqrt(np.linspace(beta_min**2, beta_max**2, int(T)))
    return from_betas(beta)


def trajectory_point(kind: TrajectoryKind | str, sched: Schedule, x0, eps, eps_mu, t) -> np.ndarray:
    """Point on a forward trajectory at integer ``t`` (``t = 0`` returns ``x0``)."""
    kind = TrajectoryKind(kind)
    x0, eps = np.asarray(x0, dtype=float), np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"dimension mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = sched.check_t(t, allow_zero=True)
    if kind is TrajectoryKind.RF:
        u = t / sched.T
        return (1.0 - u) * x0 + u * eps
    s = np.sqrt(sched.abar(t))
    noise = np.sqrt(1.0 - sched.abar(t)) * eps
    if kind is TrajectoryKind.VP:
        return s * x0 + noise
    eps_mu = np.asarray(eps_mu, dtype=float)
    if eps_mu.shape[-1:] != x0.shape[-1:]:
        raise ValueError(f"dimension mismatch: x0 {x0.shape} vs eps_mu {eps_mu.shape}")
    return s * x0 + (1.0 - s) * eps_mu + noise
