"""``rayflow`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..chain import RayFlowParams
from ..distill import sample_k_step
from ..gaussian import Rng
from ..time_sampler import exact_is_variance, optimal_q
from .config import ConfigError, load_config
from .datasets import DATASETS
from .experiment import (
    SCHEMA_VERSION,
    distill_run,
    fmt,
    load_student,
    read_csv,
    run_benchmark,
    run_name,
    save_run,
    summarize,
    write_csv,
)
from .verify import run_verification, write_report


def cmd_verify(args) -> int:
    report = run_verification(load_config(args.config))
    print(report.table())
    if args.json:
        write_report(report, args.json)
    return 0 if report.passed else 1


def cmd_distill(args) -> int:
    cfg = load_config(args.config)
    cfg.update({"distill.dataset": args.dataset, "distill.solver_steps": args.steps,
                "distill.sigma": args.sigma, "distill.epochs": args.epochs})
    if args.T is not None:
        cfg["schedule.T"] = args.T
    if args.steps > cfg["schedule.T"]:
        raise ConfigError(f"--steps {args.steps} exceeds schedule.T {cfg['schedule.T']}")
    run = distill_run(cfg, args.seed, not args.no_time_sampler)
    out = save_run(run, args.out)
    print(f"{run_name(args.dataset, args.seed, not args.no_time_sampler)}: "
          f"final loss {run.log.epoch_loss[-1]:.6g}, checkpoints in {out}")
    return 0


def cmd_sample(args) -> int:
    den, sched, sigma, _ = load_student(args.ckpt)
    x = sample_k_step(den, sched, RayFlowParams(np.zeros(2), sigma), args.k, Rng(args.seed), args.count)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows([[fmt(float(a)) for a in row] for row in x])
    return 0


def time_sampler_instances(n: int, T: int = 32, seed: int = 0) -> list[dict]:
    """Random positive loss profiles; exact IS variance under uniform and q*."""
    rng = Rng(seed, (12,))
    rows = []
    for i in range(n):
        xi = np.exp(1.5 * rng.normal(T))
        p = np.full(T, 1.0 / T)
        vu = exact_is_variance(xi, p, p)
        vq = exact_is_variance(xi, p, optimal_q(xi, p))
        rows.append({"instance_id": i, "var_uniform": vu, "var_qstar": vq,
                     "ratio": vq / vu if vu > 0 else 1.0})
    return rows


def cmd_bench_time_sampler(args) -> int:
    rows = time_sampler_instances(args.instances, args.T, args.seed)
    cols = ("instance_id", "var_uniform", "var_qstar", "ratio")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows([[fmt(r[c]) for c in cols] for r in rows])
    frac = float(np.mean([r["ratio"] <= 1.0 for r in rows])) if rows else 0.0
    summary = {"schema_version": SCHEMA_VERSION, "instances": len(rows), "T": args.T,
               "fraction_ratio_le_1": frac}
    Path(args.out).with_suffix(".json").write_text(json.dumps(summary, indent=1))
    print(f"ratio <= 1 on {frac:.0%} of {len(rows)} instances")
    return 0


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise FileNotFoundError(f"runs directory {runs} does not exist")
    rows = [r for p in sorted(runs.rglob("*.csv")) if _is_metrics(p) for r in read_csv(p)]
    logs = {}
    for p in sorted(runs.rglob("log.json")):
        log = json.loads(p.read_text())
        logs[p.parent.name] = {"epochs": len(log["epoch_loss"]), "final_loss": log["epoch_loss"][-1]}
    out = summarize(rows) if rows else {"schema_version": SCHEMA_VERSION}
    out["runs"] = logs
    Path(args.out).write_text(json.dumps(out, indent=1))
    return 0


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    if args.seeds is not None:
        cfg["benchmark.seeds"] = args.seeds
    runs = Path(args.runs)
    runs.mkdir(parents=True, exist_ok=True)
    rows = run_benchmark(cfg, runs_dir=runs, train_in_place=not args.reuse)
    write_csv(rows, runs / "metrics.csv")
    print(json.dumps(summarize(rows), indent=1))
    return 0


def _is_metrics(path: Path) -> bool:
    with open(path) as fh:
        return fh.readline().strip() == "dataset,K,time_sampler,seed,w2,mmd"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rayflow", description="RayFlow distillation at desk scale")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run every named invariant check")
    p.add_argument("--config")
    p.add_argument("--json")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("distill", help="build teacher pairs and train a student")
    p.add_argument("--dataset", required=True, choices=DATASETS)
    p.add_argument("--steps", type=int, required=True, help="solver steps K for pair construction")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--T", type=int, help="override schedule.T")
    p.add_argument("--no-time-sampler", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("sample", help="draw K-step samples from a student checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("bench-time-sampler", help="IS variance of q* versus uniform on random instances")
    p.add_argument("--instances", type=int, required=True)
    p.add_argument("--T", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench_time_sampler)

    p = sub.add_parser("benchmark", help="train and score students over the step grid, with and without the time sampler")
    p.add_argument("--runs", required=True, help="directory for checkpoints and metrics.csv")
    p.add_argument("--seeds", type=int)
    p.add_argument("--reuse", action="store_true", help="score existing checkpoints instead of training")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("report", help="summarise benchmark CSVs and training logs")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"rayflow {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
