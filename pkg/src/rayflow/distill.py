"""Distillation pipeline: build (x0, eps_mu) pairs with a teacher, train the
student along the RayFlow rays, and sample in K steps or one step."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .chain import RayFlowParams
from .net import AdamW, Net, NetDenoiser, backward, forward
from .schedule import Schedule
from .time_sampler import (
    TimeSamplerConfig,
    init_particles,
    induced_p,
    sampler_weights,
    train_time_sampler,
)


class NaNLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class DistillPair:
    x0_hat: np.ndarray
    eps_hat_mu: np.ndarray
    noise: np.ndarray
    steps: int


@dataclass
class TrainConfig:
    epochs: int = 200
    steps: int = 32
    sigma: float = 0.3
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    time_sampler: bool = True
    n_particles: int = 32
    sampler_lr: float = 1e-3
    sampler_batch: int = 8  # pairs per time-sampler update


    def __post_init__(self):
        if min(self.epochs, self.steps, self.batch_size, self.n_particles, self.sampler_batch) < 1:
            raise ValueError("counts must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    t_histogram: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": 1, "epoch_loss": self.epoch_loss,
                "t_histogram": self.t_histogram, "config": self.config}


def timestep_map(K: int, T: int) -> list[int]:
    """Schedule indices t(k) = round(k T / K) for k = 0..K (half rounds up)."""
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    return [int(np.floor(k * T / K + 0.5)) for k in range(K + 1)]


def ddim_solve(teacher, sched: Schedule, noise, K: int):
    """Deterministic K-stride VP solver from ``noise`` at t = T.

    Returns the final sample and the mean of the teacher's noise predictions.
    """
    ts = timestep_map(K, sched.T)
    x = np.atleast_2d(np.asarray(noise, dtype=float))
    acc = np.zeros_like(x)
    for k in range(K, 0, -1):
        t, tp = ts[k], ts[k - 1]
        ab, abp = sched.abar(t), sched.abar(tp)
        e = np.asarray(teacher(x, t), dtype=float)
        acc += e
        x0 = (x - np.sqrt(1.0 - ab) * e) / np.sqrt(ab)
        x = np.sqrt(abp) * x0 + np.sqrt(1.0 - abp) * e
    return x, acc / K


def construct_pairs(teacher, sched: Schedule, n: int, K: int, rng, dim: int = 2) -> list[DistillPair]:
    """Draw one noise vector per pair from its own RNG stream and solve with the teacher."""
    if K < 1:
        raise ValueError("K must be >= 1")
    noise = np.stack([rng.split(i).normal(dim) for i in range(n)])
    x0, eps_mu = ddim_solve(teacher, sched, noise, K)
    return [DistillPair(x0[i], eps_mu[i], noise[i], K) for i in range(n)]


def stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([p.x0_hat for p in pairs]), np.stack([p.eps_hat_mu for p in pairs]))


def ray_points(sched: Schedule, x0, eps_mu, t) -> np.ndarray:
    s = np.sqrt(np.concatenate([[1.0], sched.alpha_bar])[np.asarray(t)])
    s = s[..., None] if np.ndim(s) else s
    return s * x0 + (1.0 - s) * eps_mu


def student_loss(student: Net, sched: Schedule, x0, eps_mu, t):
    """Mean squared error and its output gradient at the ray points."""
    den = NetDenoiser(student, sched)
    inp = den.inputs(ray_points(sched, x0, eps_mu, t), t)
    err = forward(student, inp) - eps_mu
    loss = float(np.mean(np.sum(err**2, axis=1)))
    return loss, inp, 2.0 * err / err.shape[0]


def _draw_t(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p, axis=1)
    cdf[:, -1] = 1.0
    return (cdf < u[:, None]).sum(axis=1) + 1


def train(student: Net, sampler_net: Net, pairs, sched: Schedule, cfg: TrainConfig, rng):
    """Fit the student to map ray points to each pair's target mean.

    With the time sampler on, each pair's timestep is drawn from the
    normalised |f_t| of ``sampler_net``; otherwise uniformly from 1..T.
    Returns ``(student, sampler_net, TrainLog)``.
    """
    if not pairs:
        raise ValueError("no training pairs")
    x0_all, eps_all = stack_pairs(pairs)
    N, T = len(pairs), sched.T
    opt = AdamW(lr=cfg.lr)
    sopt = AdamW(lr=cfg.sampler_lr)
    ts_cfg = TimeSamplerConfig(lr=cfg.sampler_lr)
    ps = init_particles(cfg.n_particles, T, rng.split(1))
    log = TrainLog(config=asdict(cfg))
    draw = rng.split(2)

    def xi_fn(x0, eps, ts):
        B, n = x0.shape[0], ts.size
        tt = np.tile(ts, B)
        X0, E = np.repeat(x0, n, axis=0), np.repeat(eps, n, axis=0)
        pred = NetDenoiser(student, sched)(ray_points(sched, X0, E, tt), tt)
        return np.sum((pred - E) ** 2, axis=1).reshape(B, n)

    for _ in range(cfg.epochs):
        order = draw.gen.permutation(N)
        losses, hist = [], np.zeros(T, dtype=int)
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x0, eps = x0_all[idx], eps_all[idx]
            u = draw.uniform(size=idx.size)
            if cfg.time_sampler:
                t = _draw_t(induced_p(sampler_weights(sampler_net, x0, eps, sched)), u)
            else:
                t = np.minimum((u * T).astype(int) + 1, T)
            loss, inp, g = student_loss(student, sched, x0, eps, t)
            if not np.isfinite(loss):
                raise NaNLossError(f"non-finite student loss {loss} at epoch {len(log.epoch_loss)}")
            student = opt.step(student, backward(student, inp, g))
            if cfg.time_sampler:
                sub = slice(0, cfg.sampler_batch)
                sampler_net, ps = train_time_sampler(sampler_net, ps, x0[sub], eps[sub], xi_fn, sched, ts_cfg, sopt)
            losses.append(loss * idx.size)
            hist += np.bincount(t - 1, minlength=T)
        log.epoch_loss.append(float(np.sum(losses) / N))
        log.t_histogram.append(hist.tolist())
    return student, sampler_net, log


def sample_k_step(student, sched: Schedule, params: RayFlowParams, K: int, rng, n: int = 1) -> np.ndarray:
    """K-step sampler; each stride uses a = sqrt(abar_t / abar_t') and noise sqrt(beta_tilde_t) sigma."""
    ts = timestep_map(K, sched.T)
    d = params.eps_mu.shape[-1]
    x = rng.normal((n, d))
    for k in range(K, 0, -1):
        t, tp = ts[k], ts[k - 1]
        a = np.sqrt(sched.abar(t) / sched.abar(tp))
        eps = np.asarray(student(x, t), dtype=float)
        z = rng.normal((n, d))
        x = x / a - (1.0 - a) / a * eps + np.sqrt(sched.btilde(t)) * params.sigma * z
    return x


def sample_one_step(student, sched: Schedule, params: RayFlowParams, rng, n: int = 1) -> np.ndarray:
    """Single jump from t = T to x0."""
    d = params.eps_mu.shape[-1]
    x = rng.normal((n, d))
    T = sched.T
    s = np.sqrt(sched.abar(T))
    eps = np.asarray(student(x, T), dtype=float)
    z = rng.normal((n, d))
    return x / s - (1.0 - s) / s * eps + np.sqrt(sched.btilde(T)) * params.sigma * z
