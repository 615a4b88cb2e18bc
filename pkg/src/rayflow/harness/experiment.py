"""Distillation runs, checkpoints and the step-grid / time-sampler benchmark."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..chain import RayFlowParams
from ..denoiser import GMMTeacher
from ..distill import TrainConfig, TrainLog, construct_pairs, ddim_solve, sample_k_step, train
from ..gaussian import Rng
from ..net import Net, NetDenoiser, denoiser_dims, init_net, load_net, sampler_dims, save_net
from ..schedule import Schedule, make_linear_schedule
from .config import make_config
from .datasets import gen_dataset, hash_name, teacher_mixture
from .metrics import MetricReport, mmd, wasserstein2

CSV_COLUMNS = ("dataset", "K", "time_sampler", "seed", "w2", "mmd")
SCHEMA_VERSION = 1


class MissingCheckpointError(FileNotFoundError):
    pass


@dataclass
class RunResult:
    student: Net
    sampler: Net
    log: TrainLog
    sched: Schedule
    sigma: float
    meta: dict


def build_schedule(cfg: dict) -> Schedule:
    return make_linear_schedule(cfg["schedule.T"], cfg["schedule.beta_min"], cfg["schedule.beta_max"])


def train_config(cfg: dict, seed: int, time_sampler: bool) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["distill.epochs"], steps=cfg["distill.solver_steps"], sigma=cfg["distill.sigma"],
        lr=cfg["distill.lr"], batch_size=cfg["distill.batch_size"], seed=seed,
        time_sampler=time_sampler, n_particles=cfg["time_sampler.particles"],
        sampler_lr=cfg["time_sampler.lr"], sampler_batch=cfg["time_sampler.batch"],
    )


def distill_run(cfg: dict, seed: int, time_sampler: bool, dataset: str | None = None) -> RunResult:
    """Build teacher pairs and train one student (and its time sampler).

    The pairs and initial weights depend on ``seed`` only, so the on/off
    runs for a seed differ in the timestep distribution alone.
    """
    dataset = dataset or cfg["distill.dataset"]
    sched = build_schedule(cfg)
    tcfg = train_config(cfg, seed, time_sampler)
    rng = Rng(seed, (hash_name(dataset),))
    teacher = GMMTeacher(teacher_mixture(dataset), sched)
    pairs = construct_pairs(teacher, sched, cfg["distill.pairs"], tcfg.steps, rng.split(0))
    h, hs = cfg["distill.hidden"], cfg["time_sampler.hidden"]
    student = init_net(denoiser_dims(2, (h, h)), rng.split(1), out_scale=0.1)
    sampler = init_net(sampler_dims(2, (hs, hs)), rng.split(2), out_scale=0.1)
    student, sampler, log = train(student, sampler, pairs, sched, tcfg, rng.split(3))
    meta = {
        "dataset": dataset, "seed": seed, "time_sampler": time_sampler, "sigma": tcfg.sigma,
        "schedule": {k: cfg[k] for k in ("schedule.T", "schedule.beta_min", "schedule.beta_max")},
    }
    return RunResult(student, sampler, log, sched, tcfg.sigma, meta)


def run_name(dataset: str, seed: int, time_sampler: bool) -> str:
    return f"{dataset}_seed{seed}_{'on' if time_sampler else 'off'}"


def save_run(run: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_net(run.student, out / "student.npz", {**run.meta, "role": "student"})
    save_net(run.sampler, out / "sampler.npz", {**run.meta, "role": "time_sampler"})
    (out / "log.json").write_text(json.dumps(run.log.to_dict(), indent=1))
    return out


def load_student(path) -> tuple[NetDenoiser, Schedule, float, dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "student.npz"
    if not path.exists():
        raise MissingCheckpointError(f"no checkpoint at {path}")
    net, meta = load_net(path)
    s = meta["schedule"]
    sched = make_linear_schedule(s["schedule.T"], s["schedule.beta_min"], s["schedule.beta_max"])
    return NetDenoiser(net, sched), sched, float(meta["sigma"]), meta


def reference_cloud(dataset: str, n: int, seed: int, repeat: int) -> np.ndarray:
    return gen_dataset(dataset, n, 1_000_003 + 1000 * seed + repeat).points


def _score(samples_fn, dataset: str, seed: int, cfg: dict) -> tuple[float, float]:
    n, reps = cfg["benchmark.eval_samples"], cfg["benchmark.eval_repeats"]
    w, m = [], []
    for r in range(reps):
        ref = reference_cloud(dataset, n, seed, r)
        x = samples_fn(r, n)
        w.append(wasserstein2(x, ref))
        m.append(mmd(x, ref))
    return float(np.mean(w)), float(np.mean(m))


def evaluate_student(denoiser, sched: Schedule, sigma: float, K: int, dataset: str, seed: int,
                     cfg: dict) -> tuple[float, float]:
    """Mean W2 and MMD of K-step samples against fresh reference clouds."""
    params = RayFlowParams(np.zeros(2), sigma)
    rng = Rng(seed, (hash_name(dataset), 7, K))
    return _score(lambda r, n: sample_k_step(denoiser, sched, params, K, rng.split(r), n), dataset, seed, cfg)


def evaluate_teacher(cfg: dict, dataset: str, seed: int) -> tuple[float, float]:
    sched = build_schedule(cfg)
    teacher = GMMTeacher(teacher_mixture(dataset), sched)
    rng = Rng(seed, (hash_name(dataset), 8))
    return _score(lambda r, n: ddim_solve(teacher, sched, rng.split(r).normal((n, 2)), sched.T)[0],
                  dataset, seed, cfg)


def evaluate_floor(cfg: dict, dataset: str, seed: int) -> tuple[float, float]:
    """Distance between two independent clouds of the data law itself."""
    return _score(lambda r, n: gen_dataset(dataset, n, 2_000_003 + 1000 * seed + r).points, dataset, seed, cfg)


def _cell(args) -> list[MetricReport]:
    cfg, dataset, seed, ts, runs_dir, train_in_place = args
    name = run_name(dataset, seed, ts)
    if train_in_place:
        run = distill_run(cfg, seed, ts, dataset)
        if runs_dir is not None:
            save_run(run, Path(runs_dir) / name)
        den, sched, sigma = NetDenoiser(run.student, run.sched), run.sched, run.sigma
    else:
        if runs_dir is None:
            raise MissingCheckpointError("no runs directory given and training in place is off")
        den, sched, sigma, _ = load_student(Path(runs_dir) / name)
    n = cfg["benchmark.eval_samples"]
    out = []
    for K in cfg["benchmark.steps"]:
        w, m = evaluate_student(den, sched, sigma, K, dataset, seed, cfg)
        out.append(MetricReport(dataset, K, "on" if ts else "off", seed, w, m, n, n))
    return out


def run_benchmark(config: dict | None = None, runs_dir=None, train_in_place: bool = True,
                  dataset: str | None = None) -> list[MetricReport]:
    """Teacher, data-floor and student rows for every (seed, time-sampler, K) cell."""
    cfg = make_config(config) if config is None or "schedule.T" not in config else config
    dataset = dataset or cfg["distill.dataset"]
    n, T = cfg["benchmark.eval_samples"], cfg["schedule.T"]
    seeds = range(cfg["benchmark.seeds"])
    jobs = [(cfg, dataset, s, ts, runs_dir, train_in_place) for s in seeds for ts in (True, False)]
    if cfg["benchmark.workers"] > 1:
        with ProcessPoolExecutor(cfg["benchmark.workers"]) as pool:
            cells = list(pool.map(_cell, jobs))
    else:
        cells = [_cell(j) for j in jobs]
    rows = []
    for s in seeds:
        rows.append(MetricReport(dataset, 0, "reference", s, *evaluate_floor(cfg, dataset, s), n, n))
        rows.append(MetricReport(dataset, T, "teacher", s, *evaluate_teacher(cfg, dataset, s), n, n))
    for c in cells:
        rows.extend(c)
    return rows


def fmt(x) -> str:
    return f"{x:.9g}" if isinstance(x, float) else str(x)


def write_csv(rows, path, columns=CSV_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            d = r if isinstance(r, dict) else r.to_dict()
            w.writerow([fmt(d[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["K"], r["seed"] = int(r["K"]), int(r["seed"])
        r["w2"], r["mmd"] = float(r["w2"]), float(r["mmd"])
    return rows


def summarize(rows, ablation_k: int = 2, quality_k: int = 4) -> dict:
    """Trend statistics over benchmark rows (dicts or MetricReports)."""
    rows = [r if isinstance(r, dict) else r.to_dict() for r in rows]
    seeds = sorted({r["seed"] for r in rows})
    look = {(r["K"], r["time_sampler"], r["seed"]): r for r in rows}

    def w2(K, tag, s):
        r = look.get((K, tag, s))
        return None if r is None else r["w2"]

    floor = [w2(0, "reference", s) for s in seeds]
    floor = float(np.mean([f for f in floor if f is not None])) if any(f is not None for f in floor) else None
    steps = sorted({r["K"] for r in rows if r["time_sampler"] in ("on", "off")})
    by_cell = {}
    for K in steps:
        for tag in ("on", "off"):
            vals = [w2(K, tag, s) for s in seeds if w2(K, tag, s) is not None]
            if vals:
                by_cell[f"K{K}_{tag}"] = {"mean_w2": float(np.mean(vals)), "std_w2": float(np.std(vals))}
    lo, hi = (min(steps), max(steps)) if steps else (None, None)
    more_steps = sum(1 for s in seeds if w2(hi, "on", s) is not None and w2(hi, "on", s) <= w2(lo, "on", s))
    ts_wins = sum(1 for s in seeds if w2(ablation_k, "on", s) is not None
                  and w2(ablation_k, "on", s) <= w2(ablation_k, "off", s))
    quality = [w2(quality_k, "on", s) for s in seeds if w2(quality_k, "on", s) is not None]
    return {
        "schema_version": SCHEMA_VERSION,
        "seeds": len(seeds),
        "floor_w2": floor,
        "threshold_w2": None if floor is None else 2.0 * floor,
        "cells": by_cell,
        "more_steps_better": {"K_low": lo, "K_high": hi, "seeds": more_steps},
        "time_sampler_better": {"K": ablation_k, "seeds": ts_wins},
        "quality": {"K": quality_k, "mean_w2": float(np.mean(quality)) if quality else None},
    }
