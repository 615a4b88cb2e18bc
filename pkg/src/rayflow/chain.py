"""The RayFlow Markov chain: transitions, marginals, path probability and
the parameters that make the reverse chain collapse onto the data point.

All vectors may carry leading batch axes; coefficients are scalars per
timestep, so every formula broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import DegenerateVarianceError, IsoGaussian, Rng, log_pdf
from .schedule import Schedule

DEFAULT_SIGMA_STAR = 1e-4


@dataclass(frozen=True)
class RayFlowParams:
    """Target distribution N(eps_mu, sigma^2 I) of the forward chain."""

    eps_mu: np.ndarray
    sigma: float

    def __post_init__(self):
        eps_mu = np.array(self.eps_mu, dtype=float)
        if not np.all(np.isfinite(eps_mu)):
            raise ValueError("eps_mu must be finite")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        eps_mu.setflags(write=False)
        object.__setattr__(self, "eps_mu", eps_mu)
        object.__setattr__(self, "sigma", float(self.sigma))


@dataclass(frozen=True)
class OptimalParams:
    eps_mu_star: np.ndarray
    eps_hat_mu_star: np.ndarray
    sigma_star: float
    forward_noise_means: list = field(default_factory=list)

    def as_params(self) -> RayFlowParams:
        return RayFlowParams(self.eps_mu_star, self.sigma_star)


@dataclass(frozen=True)
class BackwardMarginal:
    t: int
    dist: IsoGaussian


def forward_step(sched: Schedule, params: RayFlowParams, x_prev, t: int) -> IsoGaussian:
    a = sched.a(t)
    mean = a * np.asarray(x_prev, dtype=float) + (1.0 - a) * params.eps_mu
    return IsoGaussian(mean, (1.0 - a * a) * params.sigma**2)


def forward_marginal(sched: Schedule, params: RayFlowParams, x0, t: int) -> IsoGaussian:
    """Closed-form p(x_t | x_0); ``t = 0`` gives the point mass at ``x0``."""
    ab = sched.abar(t)
    s = np.sqrt(ab)
    mean = s * np.asarray(x0, dtype=float) + (1.0 - s) * params.eps_mu
    return IsoGaussian(mean, (1.0 - ab) * params.sigma**2)


def noise_mean(sched: Schedule, eps_mu, t: int) -> np.ndarray:
    """Mean of the accumulated forward noise at ``t``: (1 - sqrt(abar_t)) eps_mu."""
    return (1.0 - np.sqrt(sched.abar(t))) * np.asarray(eps_mu, dtype=float)


def _c_coef(sched: Schedule, t: int) -> float:
    # eps_mu coefficient of the posterior mean before any x0 substitution
    a, prev, ab = sched.a(t), sched.abar(t - 1), sched.abar(t)
    rp = np.sqrt(prev)
    num = 1.0 - a - a * a * prev + a * prev - rp + rp * a * a
    return num / (1.0 - ab)


def _e_coef(sched: Schedule, t: int) -> float:
    # multiplier of E[noise_t] after substituting x0 = (x_t - E[noise_t]) / sqrt(abar_t)
    a, prev, ab = sched.a(t), sched.abar(t - 1), sched.abar(t)
    return -np.sqrt(prev) * (1.0 - a * a) / ((1.0 - ab) * np.sqrt(ab))


def backward_step_mean_long(sched: Schedule, params: RayFlowParams, x_t, x0, t: int) -> np.ndarray:
    """Posterior mean of x_{t-1} given (x_t, x0), in the unsimplified form."""
    a, prev, ab = sched.a(t), sched.abar(t - 1), sched.abar(t)
    x_t, x0 = np.asarray(x_t, dtype=float), np.asarray(x0, dtype=float)
    lin = (np.sqrt(prev) * (1.0 - a * a) * x0 + a * (1.0 - prev) * x_t) / (1.0 - ab)
    return lin + _c_coef(sched, t) * params.eps_mu


def backward_step(sched: Schedule, params: RayFlowParams, x_t, t: int) -> IsoGaussian:
    a = sched.a(t)
    mean = np.asarray(x_t, dtype=float) / a - (1.0 - a) / a * params.eps_mu
    return IsoGaussian(mean, sched.btilde(t) * params.sigma**2)


def _noise_mean_at(sched, params, noise_means, s):
    if noise_means is None:
        return noise_mean(sched, params.eps_mu, s)
    try:
        return np.asarray(noise_means[s - 1], dtype=float)
    except IndexError:
        raise ValueError(f"noise_means has no entry for timestep {s}") from None


def backward_marginal_recursive(sched: Schedule, params: RayFlowParams, eps_hat_mu,
                                t_target: int, noise_means=None) -> BackwardMarginal:
    """p(x_{t_target} | x_T = eps_hat_mu) by exact mean/variance recursion.

    ``noise_means[s - 1]`` is E[noise_s] for ``s = 1..T``; ``None`` uses the
    chain's own value (1 - sqrt(abar_s)) eps_mu.
    """
    T = sched.T
    if int(t_target) != t_target or not 0 <= t_target <= T - 1:
        raise ValueError(f"t_target {t_target!r} outside [0, {T - 1}]")
    if noise_means is not None and len(noise_means) < T:
        raise ValueError(f"noise_means has {len(noise_means)} entries, need {T}")
    mean = np.array(eps_hat_mu, dtype=float)
    var = 0.0
    for s in range(T, t_target, -1):
        a = sched.a(s)
        drift = _e_coef(sched, s) * _noise_mean_at(sched, params, noise_means, s) + _c_coef(sched, s) * params.eps_mu
        mean = mean / a + drift
        var = var / (a * a) + sched.btilde(s) * params.sigma**2
    return BackwardMarginal(int(t_target), IsoGaussian(mean, var))


def path_probability(sched: Schedule, params: RayFlowParams, x0_hat, eps_hat_mu,
                     noise_means=None) -> tuple[float, float, float]:
    """Log-densities of the forward leg, the backward leg and their sum."""
    if params.sigma <= 0:
        raise DegenerateVarianceError("path probability needs sigma > 0")
    lf = log_pdf(forward_marginal(sched, params, x0_hat, sched.T), eps_hat_mu)
    lb = log_pdf(backward_marginal_recursive(sched, params, eps_hat_mu, 0, noise_means).dist, x0_hat)
    return lf, lb, lf + lb


def optimal_params(sched: Schedule, x0_hat, noise_mean_per_t, sigma_star: float = DEFAULT_SIGMA_STAR) -> OptimalParams:
    """Path-maximising parameters for the sample ``x0_hat``.

    The target mean is the uniform average of the supplied per-step noise
    means.  The ideal ``sigma -> 0`` is replaced by the positive constant
    ``sigma_star`` so densities stay defined.
    """
    nm = np.asarray(noise_mean_per_t, dtype=float)
    if nm.shape[0] != sched.T:
        raise ValueError(f"need {sched.T} noise means, got {nm.shape[0]}")
    if not sigma_star > 0:
        raise ValueError("sigma_star must be positive")
    eps_mu = nm.mean(axis=0)
    s = np.sqrt(sched.abar(sched.T))
    x0_hat = np.asarray(x0_hat, dtype=float)
    eps_hat = s * x0_hat + (1.0 - s) * eps_mu
    fwd = [noise_mean(sched, eps_mu, t) for t in range(1, sched.T + 1)]
    return OptimalParams(eps_mu, eps_hat, float(sigma_star), fwd)


def reverse_mean_path(sched: Schedule, params: RayFlowParams, x_T, t_target: int = 0) -> np.ndarray:
    """Apply the deterministic backward mean map from T down to ``t_target``."""
    x = np.asarray(x_T, dtype=float)
    for t in range(sched.T, t_target, -1):
        x = backward_step(sched, params, x, t).mean
    return x


def forward_mean_path(sched: Schedule, params: RayFlowParams, x0, t_end: int | None = None) -> np.ndarray:
    x = np.asarray(x0, dtype=float)
    for t in range(1, (sched.T if t_end is None else t_end) + 1):
        x = forward_step(sched, params, x, t).mean
    return x


def simulate_forward(sched: Schedule, params: RayFlowParams, x0, n: int, rng: Rng,
                     t_end: int | None = None) -> np.ndarray:
    """``n`` independent forward chains from ``x0``; returns states at ``t_end``."""
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n,) + np.shape(x0)).copy()
    for t in range(1, (sched.T if t_end is None else t_end) + 1):
        g = forward_step(sched, params, x, t)
        x = g.mean + g.std * rng.normal(x.shape)
    return x


def simulate_reverse(sched: Schedule, params: RayFlowParams, x_T, n: int, rng: Rng,
                     t_target: int = 0, noise_means=None) -> np.ndarray:
    """``n`` independent reverse chains from ``x_T`` down to ``t_target``.

    With explicit ``noise_means`` each step draws from the unsimplified
    posterior mean, substituting x0 = (x_t - E[noise_t]) / sqrt(abar_t).
    """
    x = np.broadcast_to(np.asarray(x_T, dtype=float), (n,) + np.shape(x_T)).copy()
    for t in range(sched.T, t_target, -1):
        std = np.sqrt(sched.btilde(t)) * params.sigma
        if noise_means is None:
            mean = backward_step(sched, params, x, t).mean
        else:
            x0 = (x - np.asarray(noise_means[t - 1], dtype=float)) / np.sqrt(sched.abar(t))
            mean = backward_step_mean_long(sched, params, x, x0, t)
        x = mean + std * rng.normal(x.shape)
    return x
