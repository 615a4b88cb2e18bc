import csv
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayflow.gaussian import Rng
from rayflow.harness import cli
from rayflow.harness.config import DEFAULTS, ConfigError, load_config, make_config
from rayflow.harness.datasets import (
    DATASETS,
    UnknownDatasetError,
    gauss8_mixture,
    gen_dataset,
    hash_name,
    teacher_mixture,
)
from rayflow.harness.experiment import (
    MissingCheckpointError,
    distill_run,
    fmt,
    load_student,
    read_csv,
    run_benchmark,
    save_run,
    summarize,
    write_csv,
)
from rayflow.harness.metrics import MetricReport, mmd, wasserstein2
from rayflow.harness.verify import read_report, run_verification, write_report
from rayflow.net import forward


def brute_w2(a, b):
    n = len(a)
    best = min(sum(np.sum((a[i] - b[p[i]]) ** 2) for i in range(n)) for p in itertools.permutations(range(n)))
    return np.sqrt(best / n)


clouds = st.integers(0, 10_000).flatmap(
    lambda s: st.integers(1, 7).map(lambda n: np.random.default_rng(s).normal(size=(3, n, 2))))


class TestDatasets:
    def test_gauss8_mode_counts(self):
        n = 4000
        pts = gen_dataset("gauss8", n, 3).points
        modes = np.argmin(((pts[:, None] - gauss8_mixture().means[None]) ** 2).sum(-1), axis=1)
        counts = np.bincount(modes, minlength=8)
        sd = np.sqrt(n * (1 / 8) * (7 / 8))
        assert np.all(np.abs(counts - n / 8) <= 3 * sd)

    def test_ring_radius(self):
        r = np.linalg.norm(gen_dataset("ring", 2000, 0).points, axis=1)
        assert 0.95 <= r.mean() <= 1.05

    @pytest.mark.parametrize("name", DATASETS)
    def test_deterministic_and_read_only(self, name):
        a, b = gen_dataset(name, 64, 9), gen_dataset(name, 64, 9)
        np.testing.assert_array_equal(a.points, b.points)
        assert a.points.shape == (64, 2) and not a.points.flags.writeable
        assert not np.array_equal(a.points, gen_dataset(name, 64, 10).points)

    def test_unknown_name(self):
        with pytest.raises(UnknownDatasetError):
            gen_dataset("spiral", 10, 0)
        with pytest.raises(UnknownDatasetError):
            teacher_mixture("spiral")

    def test_bad_size(self):
        with pytest.raises(ValueError):
            gen_dataset("ring", 0, 0)

    def test_hash_name_stable(self):
        assert hash_name("gauss8") == int.from_bytes(b"gauss8", "little") % 2**31

    @pytest.mark.parametrize("name", ["ring", "two_moons"])
    def test_kernel_teacher_covers_data(self, name):
        mix = teacher_mixture(name)
        x = mix.sample(512, Rng(1))
        assert wasserstein2(x, gen_dataset(name, 512, 2).points) < 0.25


class TestMetrics:
    @settings(max_examples=40, deadline=None)
    @given(clouds)
    def test_w2_matches_permutation_oracle(self, c):
        assert wasserstein2(c[0], c[1]) == pytest.approx(brute_w2(c[0], c[1]), rel=1e-9, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(clouds)
    def test_w2_metric_axioms(self, c):
        a, b, d = c
        assert wasserstein2(a, a) == 0.0
        assert wasserstein2(a, b) == pytest.approx(wasserstein2(b, a), rel=1e-12)
        assert wasserstein2(a, d) <= wasserstein2(a, b) + wasserstein2(b, d) + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(clouds, st.floats(-3, 3), st.floats(-3, 3))
    def test_w2_shift(self, c, dx, dy):
        shift = np.array([dx, dy])
        assert wasserstein2(c[0], c[0] + shift) == pytest.approx(np.linalg.norm(shift), abs=1e-9)

    def test_w2_shape_errors(self):
        with pytest.raises(ValueError):
            wasserstein2(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(ValueError):
            wasserstein2(np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            wasserstein2(np.zeros((513, 2)), np.zeros((513, 2)))

    @settings(max_examples=30, deadline=None)
    @given(clouds)
    def test_mmd_non_negative(self, c):
        assert mmd(c[0], c[1]) >= -1e-12
        assert abs(mmd(c[0], c[0])) <= 1e-12

    def test_mmd_detects_shift(self):
        a = gen_dataset("gauss8", 256, 0).points
        assert mmd(a, a + 1.0) > 10 * mmd(a, gen_dataset("gauss8", 256, 1).points)


class TestConfig:
    def test_defaults(self):
        assert make_config() == DEFAULTS

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError):
            make_config({"distill.epoch": 3})
        p = tmp_path / "c.yaml"
        p.write_text("schedule.T: 16\nbogus: 1\n")
        with pytest.raises(ConfigError):
            load_config(p)

    @pytest.mark.parametrize("key,value", [("schedule.T", 1.5), ("distill.sigma", "x"),
                                           ("benchmark.steps", [1, 2.0]), ("schedule.T", True)])
    def test_type_errors(self, key, value):
        with pytest.raises(ConfigError):
            make_config({key: value})

    def test_nested_rejected(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("schedule:\n  T: 16\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_int_promoted_to_float(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("distill.sigma: 1\nschedule.T: 16\n")
        cfg = load_config(p)
        assert cfg["distill.sigma"] == 1.0 and isinstance(cfg["distill.sigma"], float)
        assert cfg["schedule.T"] == 16


@pytest.fixture(scope="module")
def report():
    return run_verification()


class TestVerify:
    def test_all_checks_pass(self, report):
        assert report.passed, report.table()
        assert len(report.checks) >= 15

    def test_mutation_is_caught(self):
        bad = run_verification(make_config({"verify.mutate": "beta_tilde", "verify.mc_samples": 2000}))
        failed = {c.name for c in bad.checks if not c.passed}
        assert "schedule.beta_tilde" in failed and not bad.passed

    def test_json_round_trip(self, report, tmp_path):
        write_report(report, tmp_path / "r.json")
        assert read_report(tmp_path / "r.json") == report
        raw = json.loads((tmp_path / "r.json").read_text())
        raw["schema_version"] = 99
        (tmp_path / "r.json").write_text(json.dumps(raw))
        with pytest.raises(ValueError):
            read_report(tmp_path / "r.json")

    def test_table_lists_every_check(self, report):
        table = report.table()
        assert all(c.name in table for c in report.checks) and table.endswith("overall: PASS")


TINY = {"schedule.T": 8, "distill.pairs": 16, "distill.solver_steps": 4, "distill.epochs": 2,
        "distill.batch_size": 8, "distill.hidden": 8, "time_sampler.particles": 4, "time_sampler.hidden": 8,
        "time_sampler.batch": 2, "benchmark.seeds": 2, "benchmark.steps": [1, 2],
        "benchmark.eval_samples": 16, "benchmark.eval_repeats": 1}


class TestExperiment:
    def test_checkpoint_round_trip(self, tmp_path):
        run = distill_run(make_config(TINY), 0, True)
        save_run(run, tmp_path / "r")
        den, sched, sigma, meta = load_student(tmp_path / "r")
        assert sigma == run.sigma and sched.T == 8 and meta["time_sampler"] is True
        for p, q in zip(den.net.params(), run.student.params()):
            assert p.tobytes() == q.tobytes()

    def test_on_off_differ_only_in_timesteps(self):
        cfg = make_config(dict(TINY, **{"distill.epochs": 1}))
        on, off = distill_run(cfg, 3, True), distill_run(cfg, 3, False)
        assert on.log.t_histogram != off.log.t_histogram
        again = distill_run(cfg, 3, False)
        x = np.random.default_rng(0).normal(size=(4, 6))
        np.testing.assert_array_equal(forward(off.student, x), forward(again.student, x))

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(MissingCheckpointError):
            load_student(tmp_path / "nothing")
        with pytest.raises(MissingCheckpointError):
            run_benchmark(make_config(TINY), runs_dir=tmp_path, train_in_place=False)

    def test_benchmark_rows_and_summary(self, tmp_path):
        cfg = make_config(TINY)
        rows = run_benchmark(cfg, runs_dir=tmp_path)
        kinds = {(r.K, r.time_sampler) for r in rows}
        assert kinds == {(0, "reference"), (8, "teacher"), (1, "on"), (2, "on"), (1, "off"), (2, "off")}
        reused = run_benchmark(cfg, runs_dir=tmp_path, train_in_place=False)
        assert [r.w2 for r in reused] == [r.w2 for r in rows]
        s = summarize(rows, ablation_k=2, quality_k=2)
        assert s["seeds"] == 2 and s["threshold_w2"] == pytest.approx(2 * s["floor_w2"])
        assert set(s["cells"]) == {"K1_on", "K1_off", "K2_on", "K2_off"}

    def test_summarize_counts(self):
        rows = []
        for s, (k1, k8, on2, off2) in enumerate([(1.0, 0.2, 0.3, 0.4), (1.0, 1.5, 0.5, 0.4), (0.9, 0.3, 0.3, 0.3)]):
            rows += [MetricReport("g", 0, "reference", s, 0.2, 0.0, 8, 8),
                     MetricReport("g", 1, "on", s, k1, 0.0, 8, 8), MetricReport("g", 8, "on", s, k8, 0.0, 8, 8),
                     MetricReport("g", 2, "on", s, on2, 0.0, 8, 8), MetricReport("g", 2, "off", s, off2, 0.0, 8, 8)]
        out = summarize(rows)
        assert out["more_steps_better"]["seeds"] == 2
        assert out["time_sampler_better"]["seeds"] == 2
        assert out["floor_w2"] == pytest.approx(0.2)
        assert out["quality"]["mean_w2"] is None

    def test_csv_format(self, tmp_path):
        rows = [MetricReport("gauss8", 4, "on", 1, 1 / 3, 2e-7, 512, 512)]
        write_csv(rows, tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "dataset,K,time_sampler,seed,w2,mmd"
        assert lines[1] == "gauss8,4,on,1,0.333333333,2e-07"
        back = read_csv(tmp_path / "m.csv")
        assert back[0]["K"] == 4 and back[0]["w2"] == pytest.approx(1 / 3, rel=1e-9)
        assert fmt(123456789.123) == "123456789"


class TestCli:
    def test_distill_sample_report(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("distill.pairs: 16\ndistill.hidden: 8\ntime_sampler.hidden: 8\ndistill.batch_size: 8\n")
        run = tmp_path / "runs" / "r0"
        assert cli.main(["distill", "--dataset", "gauss8", "--steps", "4", "--sigma", "0.3", "--epochs", "2",
                         "--seed", "0", "--T", "8", "--config", str(cfg), "--out", str(run)]) == 0
        assert (run / "student.npz").exists() and (run / "log.json").exists()
        out = tmp_path / "s.csv"
        assert cli.main(["sample", "--ckpt", str(run), "--k", "2", "--count", "5", "--seed", "1",
                         "--out", str(out)]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["x", "y"] and len(rows) == 6
        first = out.read_text()
        cli.main(["sample", "--ckpt", str(run), "--k", "2", "--count", "5", "--seed", "1", "--out", str(out)])
        assert out.read_text() == first
        rep = tmp_path / "rep.json"
        assert cli.main(["report", "--runs", str(tmp_path / "runs"), "--out", str(rep)]) == 0
        data = json.loads(rep.read_text())
        assert data["schema_version"] == 1 and data["runs"]["r0"]["epochs"] == 2

    def test_bench_time_sampler(self, tmp_path):
        out = tmp_path / "b.csv"
        assert cli.main(["bench-time-sampler", "--instances", "20", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 20 and all(float(r["ratio"]) <= 1.0 for r in rows)
        summary = json.loads(out.with_suffix(".json").read_text())
        assert summary["fraction_ratio_le_1"] == 1.0 and summary["schema_version"] == 1

    def test_verify_json(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert cli.main(["verify", "--json", str(out)]) == 0
        assert json.loads(out.read_text())["passed"] is True
        assert "overall: PASS" in capsys.readouterr().out

    def test_errors_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("nope: 1\n")
        assert cli.main(["verify", "--config", str(bad)]) == 2
        assert cli.main(["sample", "--ckpt", str(tmp_path / "none"), "--k", "1", "--count", "1", "--seed", "0",
                         "--out", str(tmp_path / "o.csv")]) == 2
        assert cli.main(["report", "--runs", str(tmp_path / "missing"), "--out", str(tmp_path / "r.json")]) == 2
        assert cli.main(["distill", "--dataset", "gauss8", "--steps", "64", "--sigma", "0.3", "--epochs", "1",
                         "--seed", "0", "--out", str(tmp_path / "d")]) == 2
        assert "rayflow" in capsys.readouterr().err

    def test_unknown_dataset_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            cli.main(["distill", "--dataset", "spiral", "--steps", "1", "--sigma", "0.3", "--epochs", "1",
                      "--seed", "0", "--out", "x"])
