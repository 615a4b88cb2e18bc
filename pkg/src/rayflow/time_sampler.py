"""Importance sampling over timesteps.

The per-timestep loss ``xi_t`` is the squared denoising error at the
deterministic ray point; the variance-optimal proposal is proportional to
``xi_t * p(t)``.  A particle system driven by SVGD tracks that proposal and a
small network ``f(x0, eps_mu, t)`` learns it so it can be queried per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .net import AdamW, Net, backward, forward, sampler_inputs
from .schedule import Schedule

DEFAULT_BANDWIDTH = 0.25  # on the normalised t / T axis
DEFAULT_STEP_SIZE = 0.05


class DegenerateTargetError(ValueError):
    """The weighting is identically zero; fall back to the base distribution."""


class SupportError(ValueError):
    """The proposal is zero where the integrand is not."""


@dataclass(frozen=True)
class ParticleSet:
    particles: np.ndarray
    bandwidth: float
    step_size: float
    T: int

    def __post_init__(self):
        p = np.clip(np.asarray(self.particles, dtype=float), 1.0, float(self.T))
        if p.ndim != 1 or p.size < 2:
            raise ValueError("need at least two particles")
        if not (self.bandwidth > 0 and self.step_size > 0):
            raise ValueError("bandwidth and step_size must be positive")
        object.__setattr__(self, "particles", p)

    @property
    def n(self) -> int:
        return self.particles.size

    def timesteps(self) -> np.ndarray:
        """Particles rounded to the nearest integer timestep."""
        return np.clip(np.rint(self.particles), 1, self.T).astype(int)


def init_particles(n: int, T: int, rng, bandwidth: float | None = None,
                   step_size: float = DEFAULT_STEP_SIZE) -> ParticleSet:
    """Uniform particles on [1, T]; default bandwidth is 0.25 on the t/T axis."""
    h = DEFAULT_BANDWIDTH * T if bandwidth is None else bandwidth
    return ParticleSet(rng.uniform(1.0, float(T), size=n), h, step_size, T)


@dataclass(frozen=True)
class ISReport:
    estimate: float
    variance: float
    n: int
    distribution: str


def xi(denoiser, sched: Schedule, x0, eps_mu, t: int) -> float | np.ndarray:
    """Squared denoising error at sqrt(abar_t) x0 + (1 - sqrt(abar_t)) eps_mu."""
    s = np.sqrt(sched.abar(sched.check_t(t)))
    eps_mu = np.asarray(eps_mu, dtype=float)
    point = s * np.asarray(x0, dtype=float) + (1.0 - s) * eps_mu
    err = np.asarray(denoiser(point, t)) - eps_mu
    out = np.sum(err**2, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def xi_curve(denoiser, sched: Schedule, x0, eps_mu, ts=None) -> np.ndarray:
    """``xi`` at every timestep in ``ts`` (default 1..T); batch inputs give shape (B, len(ts))."""
    ts = np.arange(1, sched.T + 1) if ts is None else np.asarray(ts)
    cols = [xi(denoiser, sched, x0, eps_mu, int(t)) for t in ts]
    return np.stack(cols, axis=-1)


def optimal_q(xi_values, base_p) -> np.ndarray:
    """Normalised q*_t proportional to xi_t * p_t."""
    xi_values = np.asarray(xi_values, dtype=float)
    base_p = np.asarray(base_p, dtype=float)
    if np.any(xi_values < 0):
        raise ValueError("xi must be non-negative")
    w = xi_values * base_p
    total = w.sum()
    if not total > 0:
        raise DegenerateTargetError("loss identically zero; fall back to base_p")
    return w / total


def exact_is_variance(xi_values, base_p, q) -> float:
    """Single-sample variance E_q[(xi p / q)^2] - mu^2 of the IS estimator."""
    xi_values, base_p, q = (np.asarray(a, dtype=float) for a in (xi_values, base_p, q))
    _check_support(xi_values, base_p, q)
    mu = float(xi_values @ base_p)
    m = q > 0
    second = float(np.sum((xi_values[m] * base_p[m]) ** 2 / q[m]))
    return max(second - mu * mu, 0.0)


def _check_support(xi_values, base_p, q):
    if np.any((q <= 0) & (xi_values * base_p != 0)):
        raise SupportError("q must be positive wherever xi * p is non-zero")


def is_estimate(xi_sampler, q, base_p, n: int, rng, tag: str = "q") -> ISReport:
    """Importance-sampling estimate of sum_t xi_t p_t from ``n`` draws of ``q``.

    ``xi_sampler`` is either the vector of xi values over t = 1..T or a callable
    mapping an integer array of timesteps to their xi values.
    """
    q, base_p = np.asarray(q, dtype=float), np.asarray(base_p, dtype=float)
    if callable(xi_sampler):
        xi_fn = xi_sampler
        grid = np.asarray(xi_fn(np.arange(1, q.size + 1)), dtype=float)
    else:
        grid = np.asarray(xi_sampler, dtype=float)
        xi_fn = lambda ts: grid[ts - 1]  # noqa: E731
    _check_support(grid, base_p, q)
    ts = rng.choice(q.size, size=n, p=q) + 1
    terms = np.asarray(xi_fn(ts), dtype=float) * base_p[ts - 1] / q[ts - 1]
    var = float(terms.var(ddof=1)) if n > 1 else 0.0
    return ISReport(float(terms.mean()), var, int(n), tag)


# ---------------------------------------------------------------------------
# SVGD
# ---------------------------------------------------------------------------


def gaussian_kernel(t, t2, h: float):
    return np.exp(-((np.asarray(t) - np.asarray(t2)) ** 2) / (2.0 * h * h))


def svgd_direction(ps: ParticleSet, target_score) -> np.ndarray:
    scores = np.asarray(target_score(ps.particles), dtype=float)
    return _kernels.svgd_phi(ps.particles, scores, ps.bandwidth)


def svgd_step(ps: ParticleSet, target_score) -> ParticleSet:
    """Move every particle by ``step_size * phi`` and clamp to [1, T]."""
    phi = svgd_direction(ps, target_score)
    return replace(ps, particles=ps.particles + ps.step_size * phi)


def run_svgd(ps: ParticleSet, target_score, steps: int) -> ParticleSet:
    for _ in range(steps):
        ps = svgd_step(ps, target_score)
    return ps


def kde_target_score(ps: ParticleSet, xi_at):
    """Score of the xi-weighted Gaussian KDE built on the current particles."""
    centers = ps.particles.copy()
    w = np.asarray(xi_at(centers), dtype=float)
    if np.any(w < 0):
        raise ValueError("xi must be non-negative")
    if not w.sum() > 0:
        raise DegenerateTargetError("xi vanishes at every particle")
    h = ps.bandwidth

    def score(t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = _kernels.kde_score(centers, w, h, t_arr)
        return out if np.ndim(t) else float(out[0])

    return score


# ---------------------------------------------------------------------------
# time-sampler network
# ---------------------------------------------------------------------------


@dataclass
class TimeSamplerConfig:
    regress_steps: int = 1
    stein_steps: int = 1
    stein_weight: float = 1.0
    lr: float = 1e-3


def sampler_weights(net: Net, x0, eps_mu, sched: Schedule, ts=None) -> np.ndarray:
    """Raw outputs f_t of the sampler network; shape (B, len(ts)) for batched pairs."""
    ts = np.arange(1, sched.T + 1) if ts is None else np.asarray(ts, dtype=float)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    eps_mu = np.atleast_2d(np.asarray(eps_mu, dtype=float))
    B, L = x0.shape[0], ts.size
    inp = sampler_inputs(np.repeat(x0, L, axis=0), np.repeat(eps_mu, L, axis=0), np.tile(ts, B), sched)
    return forward(net, inp)[:, 0].reshape(B, L)


def induced_p(weights) -> np.ndarray:
    """Rows |f_t| / sum_t |f_t|; an all-zero row falls back to uniform."""
    a = np.abs(np.atleast_2d(np.asarray(weights, dtype=float)))
    tot = a.sum(axis=1, keepdims=True)
    uniform = np.full_like(a, 1.0 / a.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tot > 0, a / np.where(tot > 0, tot, 1.0), uniform)
    return p


def _stein_loss_grad(f: np.ndarray, particles: np.ndarray, h: float):
    """Mean squared SVGD displacement when the target KDE is weighted by |f|.

    ``f`` is (B, n): network outputs at the particles for each pair.  Returns
    the loss and d loss / d f.
    """
    B, n = f.shape
    w = np.abs(f) + 1e-12
    diff = particles[None, :] - particles[:, None]  # [m, j] = t_j - t_m
    logk = -(diff**2) / (2 * h * h)
    kmat = np.exp(logk)  # symmetric; k(t_j, t_i)
    g = -diff / (h * h)  # [m, j] = d/dt log K(t_m, t) at t = t_j
    kt = np.exp(logk - logk.max(axis=0, keepdims=True))  # column-rescaled, ratios only
    wk = w[:, :, None] * kt[None]  # [b, m, j]
    den = wk.sum(axis=1)  # [b, j]
    s = (wk * g[None]).sum(axis=1) / den  # score at each particle
    # phi_i = (1/n) sum_j s_j k(t_j, t_i) + (t_i - t_j)/h^2 k(t_j, t_i)
    rep = (diff / (h * h) * kmat).mean(axis=0)  # [i]
    phi = s @ kmat / n + rep[None]
    loss = float((phi**2).mean())
    dphi = 2.0 * phi / (B * n)  # d loss / d phi
    ds = dphi @ kmat.T / n  # [b, j]
    # d s_j / d w_m = kt[m, j] (g[m, j] - s_j) / den_j
    dw = np.einsum("bj,mj,bmj->bm", ds / den, kt, g[None] - s[:, None, :])
    return loss, dw * np.sign(f)


def train_time_sampler(net: Net, ps: ParticleSet, x0, eps_mu, xi_fn, sched: Schedule,
                       cfg: TimeSamplerConfig | None = None, opt: AdamW | None = None):
    """One round of time-sampler updates for a batch of (x0, eps_mu) pairs.

    Phase 1 regresses f at the particle timesteps onto ``xi_fn(x0, eps_mu, t)``.
    Phase 2 minimises the mean squared SVGD displacement of the particles under
    the |f|-weighted KDE target.  The particles then take one SVGD step toward
    the xi-weighted KDE target.  Returns ``(net, particles)``.
    """
    cfg = cfg or TimeSamplerConfig()
    opt = opt or AdamW(lr=cfg.lr)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    eps_mu = np.atleast_2d(np.asarray(eps_mu, dtype=float))
    B, n = x0.shape[0], ps.n
    ts = ps.timesteps()
    target = np.asarray(xi_fn(x0, eps_mu, ts), dtype=float).reshape(B, n)
    inp = sampler_inputs(np.repeat(x0, n, axis=0), np.repeat(eps_mu, n, axis=0), np.tile(ts, B), sched)
    for _ in range(cfg.regress_steps):
        f = forward(net, inp)[:, 0]
        g = 2.0 * (f - target.ravel()) / f.size
        net = opt.step(net, backward(net, inp, g[:, None]))
    for _ in range(cfg.stein_steps):
        f = forward(net, inp)[:, 0].reshape(B, n)
        _, df = _stein_loss_grad(f, ps.particles, ps.bandwidth)
        net = opt.step(net, backward(net, inp, cfg.stein_weight * df.reshape(-1, 1)))
    mean_xi = target.mean(axis=0)
    if mean_xi.sum() > 0:
        ps = svgd_step(ps, kde_target_score(ps, lambda _: mean_xi))
    return net, ps
