"""Named invariant checks across every module, collected into one report."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .. import chain, schedule as sch
from ..chain import RayFlowParams
from ..denoiser import FiniteDataset, denoise_loss, optimal_denoise, optimal_denoise_loss_stationarity
from ..distill import sample_k_step, sample_one_step
from ..gaussian import Rng, mc_moments
from ..net import NetDenoiser, backward, denoiser_dims, forward, init_net, sampler_dims
from ..time_sampler import (
    ParticleSet,
    _stein_loss_grad,
    exact_is_variance,
    gaussian_kernel,
    is_estimate,
    optimal_q,
    run_svgd,
)
from .config import make_config

SCHEMA_VERSION = 1

# particle-system configuration for the SVGD convergence check
SVGD_KS_T = 10
SVGD_KS_PARTICLES = 256
SVGD_KS_STEPS = 2000
SVGD_KS_STEP_SIZE = 0.05
SVGD_KS_BANDWIDTH = 0.25 * SVGD_KS_T / 20


@dataclass(frozen=True)
class Check:
    name: str
    module: str
    anchor: str  # the property being checked
    error: float
    tolerance: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "passed": self.passed,
                "checks": [asdict(c) for c in self.checks]}

    def table(self) -> str:
        w = max(len(c.name) for c in self.checks)
        lines = [f"{'check':<{w}}  {'module':<15} {'error':>11} {'tol':>9}  result"]
        for c in self.checks:
            lines.append(f"{c.name:<{w}}  {c.module:<15} {c.error:>11.3e} {c.tolerance:>9.1e}  "
                         f"{'PASS' if c.passed else 'FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _check(name, module, anchor, error, tol, strict=False, detail=""):
    ok = bool(error < tol) if strict else bool(error <= tol)
    return Check(name, module, anchor, float(error), float(tol), ok, detail=detail)


def _random_schedule(rng: Rng, T_max: int = 128, T_min: int = 1, factory=sch.make_linear_schedule):
    T = int(rng.gen.integers(T_min, T_max + 1))
    lo = rng.uniform(1e-3, 0.2)
    hi = rng.uniform(lo, 0.9)
    return factory(T, lo, hi)


def mutant_schedule(T: int, beta_min: float, beta_max: float) -> sch.Schedule:
    """Schedule whose beta_tilde forgets the posterior ratio (mutation target)."""
    s = sch.make_linear_schedule(T, beta_min, beta_max)
    return replace(s, beta_tilde=1.0 - s.alpha**2)


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def check_schedule(n: int = 100, seed: int = 0, mutate: bool = False) -> list[Check]:
    rng = Rng(seed, (1,))
    factory = mutant_schedule if mutate else sch.make_linear_schedule
    unit, mono, bt = 0.0, 0, 0.0
    for _ in range(n):
        s = _random_schedule(rng, factory=factory)
        unit = max(unit, float(np.max(np.abs(s.alpha**2 + s.beta**2 - 1.0))))
        mono += int(np.sum(np.diff(s.alpha_bar) >= 0))
        # independent loop recomputation of the posterior variance coefficient
        prod, ref = 1.0, []
        for a in s.alpha:
            prev, prod = prod, prod * a * a
            ref.append((1.0 - a * a) * (1.0 - prev) / (1.0 - prod))
        bt = max(bt, float(np.max(np.abs(s.beta_tilde - ref))), abs(float(s.beta_tilde[0])),
                 float(max(0.0, -s.beta_tilde.min())))
    return [
        _check("schedule.unit_norm", "schedule", "alpha^2 + beta^2 = 1", unit, 1e-12),
        _check("schedule.abar_decreasing", "schedule", "alpha_bar strictly decreasing", mono, 0),
        _check("schedule.beta_tilde", "schedule", "beta_tilde formula, >= 0, zero at t=1", bt, 1e-12),
    ]


def check_posterior_identity(n: int = 1000, seed: int = 0) -> list[Check]:
    rng = Rng(seed, (2,))
    err = 0.0
    for _ in range(n):
        s = _random_schedule(rng, T_max=64, T_min=1)
        t = int(rng.gen.integers(1, s.T + 1))
        d = int(rng.gen.integers(1, 5))
        p = RayFlowParams(rng.normal(d), rng.uniform(0.05, 1.0))
        x_t = rng.normal(d)
        x0 = (x_t - chain.noise_mean(s, p.eps_mu, t)) / np.sqrt(s.abar(t))
        long = chain.backward_step_mean_long(s, p, x_t, x0, t)
        err = max(err, float(np.max(np.abs(long - chain.backward_step(s, p, x_t, t).mean))))
    return [_check("chain.posterior_mean_identity", "rayflow_chain",
                   "long-form posterior mean equals x_t/a - (1-a)/a eps_mu", err, 1e-10, strict=True)]


def _zscores(samples, mean, var):
    n, d = samples.shape
    m, v = mc_moments(samples)
    z_mean = np.abs(m - mean) / np.sqrt(var / n)
    z_var = abs(v - var) / (var * np.sqrt(2.0 / (n * d - 1)))
    return float(max(z_mean.max(), z_var))


def check_forward_marginal(n_mc: int = 100_000, seed: int = 0) -> list[Check]:
    rng = Rng(seed, (3,))
    s = sch.make_linear_schedule(10, 0.1, 0.6)
    p = RayFlowParams(rng.normal(2), 0.7)
    x0 = rng.normal(2)
    mean, var, exact = x0.copy(), 0.0, 0.0
    for t in range(1, s.T + 1):
        a = s.a(t)
        mean = a * mean + (1 - a) * p.eps_mu
        var = a * a * var + s.beta[t - 1] ** 2 * p.sigma**2
        g = chain.forward_marginal(s, p, x0, t)
        exact = max(exact, float(np.max(np.abs(g.mean - mean))), abs(g.var - var))
    x = chain.simulate_forward(s, p, x0, n_mc, rng.split(0))
    g = chain.forward_marginal(s, p, x0, s.T)
    return [
        _check("chain.forward_marginal_exact", "rayflow_chain", "step composition equals closed form",
               exact, 1e-10, strict=True),
        _check("chain.forward_marginal_mc", "rayflow_chain", "MC moments within 3 standard errors",
               _zscores(x, g.mean, g.var), 3.0),
    ]


def check_backward_marginal(n_mc: int = 100_000, seed: int = 0) -> list[Check]:
    rng = Rng(seed, (4,))
    s = sch.make_linear_schedule(8, 0.1, 0.6)
    p = RayFlowParams(rng.normal(1), 0.3)
    x_T = rng.normal(1)
    nm = [rng.normal(1) for _ in range(s.T)]
    z = 0.0
    for k, means in enumerate((None, nm)):
        bm = chain.backward_marginal_recursive(s, p, x_T, 0, means)
        x = chain.simulate_reverse(s, p, x_T, n_mc, rng.split(k), 0, means)
        z = max(z, _zscores(x, bm.dist.mean, bm.dist.var))
    return [_check("chain.backward_marginal_mc", "rayflow_chain",
                   "recursive backward marginal matches reverse-chain MC", z, 3.0)]


def check_reconstruction(n_mc: int = 100_000, seed: int = 0) -> list[Check]:
    rng = Rng(seed, (5,))
    s = sch.make_linear_schedule(64, 0.02, 0.3)
    x0 = rng.normal(2)
    op = chain.optimal_params(s, x0, rng.normal((s.T, 2)))
    p = op.as_params()
    det = float(np.max(np.abs(chain.reverse_mean_path(s, p, op.eps_hat_mu_star) - x0)))
    var = []
    for k, sig in enumerate((p.sigma, 2 * p.sigma)):
        x = chain.simulate_reverse(s, replace(p, sigma=sig), op.eps_hat_mu_star, n_mc, rng.split(k))
        var.append(float(np.mean(np.sum((x - x0) ** 2, axis=1))))
    ratio = var[1] / var[0]
    return [
        _check("chain.optimal_round_trip", "rayflow_chain", "deterministic reverse path recovers x0",
               det, 1e-3),
        _check("chain.reconstruction_sigma_scaling", "rayflow_chain",
               "reconstruction variance ratio in [3.5, 4.5] when sigma doubles",
               abs(ratio - 4.0), 0.5, detail=f"ratio={ratio:.4f}"),
    ]


def check_optimal_denoiser(n: int = 100, seed: int = 0) -> list[Check]:
    rng = Rng(seed, (6,))
    resid, worst = 0.0, 0.0
    for _ in range(n):
        K, d = int(rng.gen.integers(1, 17)), int(rng.gen.integers(1, 5))
        s = _random_schedule(rng, T_max=64)
        t = int(rng.gen.integers(1, s.T + 1))
        sig = rng.uniform(0.2, 1.5)
        ds = FiniteDataset(rng.normal((K, d)), rng.normal((K, d)))
        x_t = rng.normal(d)
        resid = max(resid, optimal_denoise_loss_stationarity(ds, s, sig, x_t, t))
        best = optimal_denoise(ds, s, sig, x_t, t)
        base = denoise_loss(ds, s, sig, x_t, t, best)
        for _ in range(5):
            delta = 1e-3 * rng.normal(d)
            worst = max(worst, base - denoise_loss(ds, s, sig, x_t, t, best + delta))
    return [
        _check("denoiser.stationarity", "oracle_denoiser", "relative gradient at optimum", resid, 1e-8),
        _check("denoiser.perturbation_increases", "oracle_denoiser", "perturbing the optimum never lowers the loss",
               max(worst, 0.0), 1e-12),
    ]


def check_variance_inequality(n: int = 100, T: int = 32, seed: int = 0) -> list[Check]:
    rng = Rng(seed, (7,))
    worse, zero_err = 0, 0.0
    for i in range(n):
        xi = np.exp(2.0 * rng.normal(T)) * (rng.uniform(size=T) > 0.2)
        if not xi.any():
            xi[0] = 1.0
        p = rng.gen.dirichlet(np.ones(T)) if i % 2 else np.full(T, 1.0 / T)
        q = optimal_q(xi, p)
        vq = exact_is_variance(xi, p, q)
        vu = exact_is_variance(xi, p, np.full(T, 1.0 / T))
        worse += int(vq > vu) + int(vq > exact_is_variance(xi, p, p))
        mu = float(xi @ p)
        for j in range(4):
            est = is_estimate(xi, q, p, 1, rng.split(i * 4 + j)).estimate
            zero_err = max(zero_err, abs(est - mu) / mu)
    return [
        _check("time_sampler.variance_inequality", "time_sampler", "Var(q*) <= Var(uniform) on every instance",
               worse, 0),
        _check("time_sampler.zero_variance", "time_sampler",
               "a single draw from q* returns the mean (relative rounding only)", zero_err, 1e-13),
    ]


def check_stein(n_mc: int = 100_000, seed: int = 0, svgd_steps: int = SVGD_KS_STEPS) -> list[Check]:
    rng = Rng(seed, (8,))
    mu, sd, h, t0 = 3.0, 1.5, 1.0, 3.7
    t = mu + sd * rng.normal(n_mc)
    k = gaussian_kernel(t, t0, h)
    terms = -(t - mu) / sd**2 * k - (t - t0) / h**2 * k
    z = abs(terms.mean()) / (terms.std(ddof=1) / np.sqrt(n_mc))
    T = SVGD_KS_T
    m, s2 = T / 2, T / 8
    ps = ParticleSet(rng.split(1).uniform(1.0, T, size=SVGD_KS_PARTICLES), SVGD_KS_BANDWIDTH, SVGD_KS_STEP_SIZE, T)
    ps = run_svgd(ps, lambda x: -(np.asarray(x) - m) / s2**2, svgd_steps)
    a, b = (1 - m) / s2, (T - m) / s2
    ks = stats.kstest(ps.particles, stats.truncnorm(a, b, loc=m, scale=s2).cdf).statistic
    return [
        _check("time_sampler.stein_identity", "time_sampler", "Stein identity MC mean within 3 standard errors",
               z, 3.0),
        _check("time_sampler.svgd_ks", "time_sampler", "SVGD particles match truncated Gaussian (KS)", ks, 0.1),
    ]


def fd_relative_error(f, x: np.ndarray, grad: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of ``grad`` against central differences of scalar ``f``."""
    num = np.zeros_like(x)
    flat, nflat = x.reshape(-1), num.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        dn = f()
        flat[i] = old
        nflat[i] = (up - dn) / (2 * h)
    scale = np.maximum(np.abs(num) + np.abs(grad), 1e-6)
    return float(np.max(np.abs(num - grad) / scale))


def net_gradient_error(dims, seed: int = 0, batch: int = 5) -> float:
    rng = Rng(seed, (9, *dims))
    net = init_net(dims, rng)
    x = rng.normal((batch, dims[0]))
    y = rng.normal((batch, dims[-1]))

    def loss():
        return float(0.5 * np.sum((forward(net, x) - y) ** 2))

    g = backward(net, x, forward(net, x) - y)
    return max(fd_relative_error(loss, p, gp) for p, gp in zip(net.params(), g.params()))


def stein_loss_gradient_error(seed: int = 0) -> float:
    rng = Rng(seed, (10,))
    f = rng.normal((3, 6)) + 0.5 * np.sign(rng.normal((3, 6)))
    parts = rng.uniform(1.0, 10.0, size=6)
    _, g = _stein_loss_grad(f, parts, 1.5)
    return fd_relative_error(lambda: _stein_loss_grad(f, parts, 1.5)[0], f, g)


def check_gradients(seed: int = 0, hidden=(64, 32)) -> list[Check]:
    shapes = [denoiser_dims(2, (h, h)) for h in hidden] + [sampler_dims(2, (h, h)) for h in hidden]
    shapes += [[3, 1], [4, 5, 2]]
    err = max(net_gradient_error(d, seed) for d in shapes)
    return [
        _check("net.gradient_check", "net", "backprop matches central differences", err, 1e-4, strict=True),
        _check("time_sampler.stein_loss_gradient", "time_sampler", "analytic Stein-loss gradient matches FD",
               stein_loss_gradient_error(seed), 1e-4, strict=True),
    ]


def check_sampler_consistency(trials: int = 100, seed: int = 0) -> list[Check]:
    rng = Rng(seed, (11,))
    s = sch.make_linear_schedule(16, 0.05, 0.5)
    den = NetDenoiser(init_net(denoiser_dims(2, (16, 16)), rng), s)
    p = RayFlowParams(np.zeros(2), 0.3)
    mismatches = sum(
        int(not np.array_equal(sample_k_step(den, s, p, 1, Rng(seed, (i,)), 8), sample_one_step(den, s, p, Rng(seed, (i,)), 8)))
        for i in range(trials)
    )
    return [_check("distill.one_step_consistency", "distill", "K=1 multi-step sampler equals one-step sampler bitwise",
                   mismatches, 0)]


# ---------------------------------------------------------------------------


def _guard(fn, name, module, *args, **kwargs) -> list[Check]:
    t0 = time.perf_counter()
    try:
        out = fn(*args, **kwargs)
    except Exception as exc:  # recorded, never aborts the suite
        return [Check(name, module, "raised", float("inf"), 0.0, False, time.perf_counter() - t0, repr(exc))]
    dt = (time.perf_counter() - t0) / len(out)
    return [replace(c, seconds=dt) for c in out]


def run_verification(config: dict | None = None) -> VerificationReport:
    cfg = config if config is not None and "verify.seed" in config else make_config(config)
    seed, n_mc, n = cfg["verify.seed"], cfg["verify.mc_samples"], cfg["verify.instances"]
    mutate = cfg["verify.mutate"] == "beta_tilde"
    plan = [
        (check_schedule, "schedule", "schedule", dict(n=n, seed=seed, mutate=mutate)),
        (check_posterior_identity, "chain.posterior_mean_identity", "rayflow_chain", dict(n=10 * n, seed=seed)),
        (check_forward_marginal, "chain.forward_marginal", "rayflow_chain", dict(n_mc=n_mc, seed=seed)),
        (check_backward_marginal, "chain.backward_marginal_mc", "rayflow_chain", dict(n_mc=n_mc, seed=seed)),
        (check_reconstruction, "chain.reconstruction", "rayflow_chain", dict(n_mc=n_mc, seed=seed)),
        (check_optimal_denoiser, "denoiser", "oracle_denoiser", dict(n=n, seed=seed)),
        (check_variance_inequality, "time_sampler.variance", "time_sampler", dict(n=n, seed=seed)),
        (check_stein, "time_sampler.stein", "time_sampler", dict(n_mc=n_mc, seed=seed)),
        (check_gradients, "net.gradients", "net", dict(seed=seed)),
        (check_sampler_consistency, "distill.one_step_consistency", "distill", dict(trials=n, seed=seed)),
    ]
    report = VerificationReport()
    for fn, name, module, kw in plan:
        report.checks.extend(_guard(fn, name, module, **kw))
    return report


def write_report(report: VerificationReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)


def read_report(path) -> VerificationReport:
    with open(path) as fh:
        raw = json.load(fh)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {raw.get('schema_version')!r}")
    return VerificationReport([Check(**c) for c in raw["checks"]])
