"""Flat ``section.key: value`` configuration with fail-fast validation."""

from __future__ import annotations

from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "schedule.T": 32,
    "schedule.beta_min": 0.02,
    "schedule.beta_max": 0.5,
    "distill.dataset": "gauss8",
    "distill.pairs": 512,
    "distill.solver_steps": 32,
    "distill.sigma": 0.3,
    "distill.epochs": 4000,
    "distill.lr": 1e-3,
    "distill.batch_size": 64,
    "distill.hidden": 64,
    "time_sampler.particles": 32,
    "time_sampler.lr": 1e-3,
    "time_sampler.batch": 8,
    "time_sampler.hidden": 32,
    "benchmark.seeds": 5,
    "benchmark.steps": [1, 2, 4, 8],
    "benchmark.eval_samples": 512,
    "benchmark.eval_repeats": 4,
    "benchmark.workers": 1,
    "verify.seed": 0,
    "verify.mc_samples": 100_000,
    "verify.instances": 100,
    "verify.mutate": "none",
}


def _coerce(key: str, value):
    want = type(DEFAULTS[key])
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is list:
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise ConfigError(f"{key} must be a list of integers")
        return value
    if not isinstance(value, want) or isinstance(value, bool) != (want is bool):
        raise ConfigError(f"{key} must be {want.__name__}, got {value!r}")
    return value


def make_config(overrides: dict | None = None) -> dict:
    """Defaults updated with ``overrides``; unknown keys and bad types raise."""
    cfg = dict(DEFAULTS)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return make_config()
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must be a flat mapping of key: value")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"nested section {key!r}; use flat dotted keys")
    return make_config(raw)
