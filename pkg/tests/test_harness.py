import json
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbo.cli import EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_OK, EXIT_WARNING, main
from cbo.consensus import consensus_point
from cbo.dynamics import CboParams, InitDistribution, ParticleEnsemble
from cbo.errors import ConfigError, NonConvergenceError
from cbo.harness import presets, runner
from cbo.harness.config import (
    ExperimentConfig,
    MeanFieldSettings,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
    parse_config,
)
from cbo.objective import BenchmarkSpec


def small(**kw):
    base = dict(
        name="small",
        benchmark=BenchmarkSpec("rastrigin", dim=3),
        cbo=CboParams(sigma=1.0, alpha=30.0, dt=0.05),
        init=InitDistribution("uniform_box", -3.0, 3.0),
        N=20,
        M=6,
        T=0.5,
        stride=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("name", [n for n in presets.list_presets() if not presets.is_group(n)])
    def test_preset_round_trip(self, name):
        text = dump_config(presets.preset_config(name))
        assert dump_config(parse_config(text)) == text

    @given(
        st.integers(1, 500),
        st.floats(1e-3, 100.0),
        st.floats(0.0, 10.0),
        st.sampled_from(["ackley", "rastrigin"]),
        st.one_of(st.none(), st.lists(st.integers(1, 300), min_size=1, max_size=4)),
    )
    def test_round_trip_property(self, N, alpha, sigma, fam, sweep):
        cfg = small(N=N, cbo=CboParams(alpha=alpha, sigma=sigma), benchmark=BenchmarkSpec(fam, dim=2),
                    sweep={"N": sweep} if sweep else None)
        text = dump_config(cfg)
        assert dump_config(parse_config(text)) == text
        assert parse_config(text) == cfg

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(dump_config(small()))
        cfg = apply_overrides(load_config(p), ["cbo.alpha=50", "N=7", "sweep.shift_B=[0, 1]", "benchmark.dim=5"])
        assert cfg.cbo.alpha == 50.0 and cfg.N == 7 and cfg.benchmark.dim == 5
        assert cfg.sweep == {"shift_B": [0.0, 1.0]}

    @pytest.mark.parametrize(
        "bad",
        [["cbo.alpha"], ["nosuch.key=1"], ["cbo.nosuch=1"], ["M=0"], ["sweep.sigma=[1]"], ["sweep.N=[]"]],
    )
    def test_bad_overrides(self, bad):
        with pytest.raises(ConfigError):
            apply_overrides(small(), bad)

    def test_unknown_top_level_key(self):
        data = config_to_dict(small())
        data["extra"] = 1
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_invalid_yaml(self):
        with pytest.raises(ConfigError):
            parse_config("a: [1, 2")

    def test_sweep_points(self):
        cfg = small(sweep={"N": [10, 20], "shift_B": [0, 1, 2]})
        pts = cfg.sweep_points()
        assert len(pts) == 6 and cfg.n_trajectories() == 36
        assign, point = pts[-1]
        assert assign == {"N": 20, "shift_B": 2.0}
        assert point.N == 20 and point.benchmark.shift_B == 2.0 and point.name == "small/N20-x2"

    def test_meanfield_settings_validation(self):
        with pytest.raises(ConfigError):
            MeanFieldSettings(domain=(1.0, -1.0))
        with pytest.raises(ConfigError):
            MeanFieldSettings(theta=0.2)


class TestPresets:
    def test_listing(self):
        names = presets.list_presets()
        for n in ("fig1-double-well", "fig3-benchmarks-1d", "fig4-w1-convergence", "table1", "table2",
                  "table3", "table4", "fig5-series", "fig6-series", "table1-N100-x0", "table4-alpha50-x0"):
            assert n in names

    def test_describe_fig4(self):
        text = presets.describe_preset("fig4-w1-convergence")
        assert "equidistant_1d" in text and "lower: -3.0" in text and "upper: 1.0" in text
        cfg = presets.preset_config("fig4-w1-convergence")
        assert cfg.benchmark.family.value == "ackley" and cfg.benchmark.shift_C == 1.0

    def test_table_cells(self):
        c = presets.preset_config("table1-N100-x0")
        assert (c.benchmark.family.value, c.benchmark.dim, c.cbo.alpha, c.N, c.cbo.sigma, c.cbo.dt, c.T) == (
            "ackley", 20, 30.0, 100, 5.0, 0.01, 10.0)
        assert presets.preset_config("table1-N100-x0", full_M=True).M == 1000
        assert len(presets.expand("table2-cells")) == 9

    def test_unknown(self):
        with pytest.raises(ConfigError):
            presets.describe_preset("nope")
        with pytest.raises(ConfigError):
            presets.expand("nope")


class TestRunExperiment:
    def test_zero_horizon_smoke(self, tmp_path):
        cfg = small(M=1, T=0.0)
        a = runner.run_experiment(cfg, tmp_path, workers=1)
        f = cfg.benchmark.build()
        X = ParticleEnsemble.initial(cfg.init, cfg.N, 3, cfg.seed_base).positions
        v = consensus_point(X, f.evaluate(X), cfg.cbo.alpha).location
        np.testing.assert_array_equal(a.records[0].final_vf, v)

    def test_archive_layout(self, tmp_path):
        a = runner.run_experiment(small(), tmp_path, workers=1)
        root = tmp_path / "small"
        assert a.path == root
        assert {p.name for p in root.iterdir()} >= {"config.yaml", "stats.json", "runs.csv", "timing.json", "series"}
        assert (root / "config.yaml").read_text() == dump_config(small())
        stats = json.loads((root / "stats.json").read_text())
        assert stats["seed_base"] == 0 and stats["M"] == 6 and stats["rng_scheme"] == runner.RNG_SCHEME
        assert "tool_version" in stats
        lines = (root / "series" / "variance.csv").read_text().splitlines()
        assert lines[0] == "t,mean,variance" and len(lines) == 1 + len(a.stats.times)
        assert len((root / "runs.csv").read_text().splitlines()) == 7

    def test_reproducible(self, tmp_path):
        runner.run_experiment(small(), tmp_path / "a", workers=1)
        runner.run_experiment(small(), tmp_path / "b", workers=1)
        assert (tmp_path / "a/small/stats.json").read_bytes() == (tmp_path / "b/small/stats.json").read_bytes()
        assert (tmp_path / "a/small/runs.csv").read_bytes() == (tmp_path / "b/small/runs.csv").read_bytes()

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        serial = runner.run_experiment(small(), tmp_path / "s", workers=1)
        monkeypatch.setenv("CBO_WORKERS", "2")
        assert runner.worker_count() == 2
        par = runner.run_experiment(small(), tmp_path / "p")
        for r1, r2 in zip(serial.records, par.records):
            np.testing.assert_array_equal(r1.final_vf, r2.final_vf)
        assert (tmp_path / "s/small/stats.json").read_bytes() == (tmp_path / "p/small/stats.json").read_bytes()

    def test_bad_worker_env(self, monkeypatch):
        monkeypatch.setenv("CBO_WORKERS", "many")
        with pytest.raises(ConfigError):
            runner.worker_count()

    def test_seeds(self):
        recs = runner.run_samples(small(seed_base=40), workers=1)
        assert [r.seed for r in recs] == list(range(40, 46))

    def test_divergence_warning(self, tmp_path):
        cfg = small(benchmark=BenchmarkSpec("ackley", dim=20), cbo=CboParams(sigma=5.0, dt=0.01, noise="isotropic"),
                    T=5.0, M=3)
        a = runner.run_experiment(cfg, tmp_path, workers=1)
        assert a.status == "warning" and a.stats.n_diverged == 3 and a.stats.success_rate == 0.0
        assert all(r.diverged and r.error for r in a.records)
        assert json.loads((tmp_path / "small/stats.json").read_text())["status"] == "warning"

    def test_sweep_rejected(self):
        with pytest.raises(ConfigError):
            runner.run_experiment(small(sweep={"N": [5]}), write=False)


class TestAtomicity:
    def test_failure_leaves_nothing(self, tmp_path, monkeypatch):
        def boom(root, archive):
            (root / "config.yaml").write_text("partial")
            raise KeyboardInterrupt

        monkeypatch.setattr(runner, "_fill_archive", boom)
        with pytest.raises(KeyboardInterrupt):
            runner.run_experiment(small(M=1), tmp_path, workers=1)
        assert list(tmp_path.iterdir()) == []

    def test_failure_keeps_previous_archive(self, tmp_path, monkeypatch):
        runner.run_experiment(small(M=1), tmp_path, workers=1)
        before = (tmp_path / "small/stats.json").read_bytes()

        def boom(root, archive):
            raise RuntimeError("disk full")

        monkeypatch.setattr(runner, "_fill_archive", boom)
        with pytest.raises(RuntimeError):
            runner.run_experiment(small(M=1, seed_base=9), tmp_path, workers=1)
        assert (tmp_path / "small/stats.json").read_bytes() == before
        assert [p.name for p in tmp_path.iterdir()] == ["small"]


class TestSweep:
    def test_budget_refused_before_running(self, tmp_path, monkeypatch):
        calls = []
        monkeypatch.setattr(runner, "run_experiment", lambda *a, **k: calls.append(a))
        cfg = small(sweep={"N": [10, 20], "shift_B": [0, 1]}, M=10, sweep_budget=39)
        with pytest.raises(ConfigError):
            runner.run_sweep(cfg, tmp_path)
        assert calls == [] and list(tmp_path.iterdir()) == []

    def test_empty_sweep_is_single_experiment(self, tmp_path):
        a = runner.run_sweep(small(sweep={}), tmp_path / "a", workers=1)
        b = runner.run_experiment(small(), tmp_path / "b", workers=1)
        assert len(a) == 1
        assert (tmp_path / "a/small/stats.json").read_bytes() == (tmp_path / "b/small/stats.json").read_bytes()

    def test_table_layout(self, tmp_path):
        cfg = small(name="t2", sweep={"N": [10, 20, 30], "shift_B": [0, 1, 2]}, M=2, T=0.1)
        archives = runner.run_sweep(cfg, tmp_path, workers=1)
        assert len(archives) == 9
        assert {p.name for p in (tmp_path / "t2").iterdir()} == {
            "N10-x0", "N10-x1", "N10-x2", "N20-x0", "N20-x1", "N20-x2", "N30-x0", "N30-x1", "N30-x2",
            "summary.csv", "summary.txt"}
        table = (tmp_path / "t2/summary.txt").read_text().splitlines()
        assert [c.strip() for c in table[1].split(" | ")] == ["x*", "N=10", "N=20", "N=30"]
        assert [row.split(" | ")[0].strip() for row in table[3:]] == ["0", "1", "2"]
        csv_rows = (tmp_path / "t2/summary.csv").read_text().splitlines()
        assert len(csv_rows) == 10 and csv_rows[0].startswith("point,N,alpha,shift_B")


class TestMeanfield:
    def test_requires_1d(self):
        with pytest.raises(ConfigError):
            runner.run_meanfield(presets.preset_config("table1-N50-x0"), write=False)

    def test_domain_checks(self):
        cfg = presets.preset_config("fig3-ackley")
        with pytest.raises(ConfigError):
            runner.initial_density(replace(cfg, init=InitDistribution("uniform_box", -4.0, 3.0)))
        with pytest.raises(ConfigError):
            runner.initial_density(replace(cfg, init=InitDistribution("uniform_box", -2.995, 3.0)))

    def test_nonconvergence_writes_partial(self, tmp_path):
        cfg = apply_overrides(presets.preset_config("fig3-ackley"), ["meanfield.max_iter=5", "meanfield.h=0.05"])
        with pytest.raises(NonConvergenceError) as exc:
            runner.run_meanfield(cfg, tmp_path)
        arch = exc.value.archive
        assert arch.status == "nonconverged" and arch.meanfield.n_steps == 5
        data = json.loads((tmp_path / "fig3-ackley/meanfield.json").read_text())
        assert data["converged"] is False and len(data["times"]) == 5
        assert (tmp_path / "fig3-ackley/snapshots/snapshot_000.csv").exists()

    def test_converged_archive(self, tmp_path):
        cfg = apply_overrides(presets.preset_config("fig3-ackley"), ["meanfield.h=0.05", "meanfield.snapshot_times=[0, 1]"])
        a = runner.run_meanfield(cfg, tmp_path)
        data = json.loads((tmp_path / "fig3-ackley/meanfield.json").read_text())
        assert data["converged"] is True and data["stop_time"] == pytest.approx(a.meanfield.stop_time)
        assert data["support"][0] < 0 < data["support"][1]
        assert len(list((tmp_path / "fig3-ackley/snapshots").iterdir())) == 3


class TestCli:
    def test_presets_and_describe(self, capsys):
        assert main(["presets"]) == EXIT_OK
        assert "table1-N100-x0" in capsys.readouterr().out
        assert main(["describe", "fig4-w1-convergence"]) == EXIT_OK
        assert "equidistant_1d" in capsys.readouterr().out

    def test_unknown_preset(self, capsys):
        assert main(["describe", "nope"]) == EXIT_CONFIG
        assert main(["run", "nope"]) == EXIT_CONFIG
        assert "unknown preset" in capsys.readouterr().err

    def test_run_yaml_with_override(self, tmp_path, capsys):
        p = tmp_path / "c.yaml"
        p.write_text(dump_config(small()))
        code = main(["run", str(p), "--set", "M=2", "-o", str(tmp_path / "out"), "-j", "1"])
        assert code == EXIT_OK
        assert load_config(tmp_path / "out/small/config.yaml").M == 2
        assert "success" in capsys.readouterr().out

    def test_sweep_summary(self, tmp_path, capsys):
        code = main(["sweep", "table3", "-M", "1", "--set", "T=0.05", "--set", "N=10", "-o", str(tmp_path),
                     "-j", "1", "--summary"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "alpha=10" in out and "alpha=50" in out
        assert (tmp_path / "table3/summary.txt").exists()

    def test_divergence_exit_code(self, tmp_path):
        code = main(["run", "table1-N50-x0", "-M", "2", "-j", "1", "-o", str(tmp_path),
                     "--set", "cbo.noise=isotropic", "--set", "T=5", "--set", "N=10"])
        assert code == EXIT_WARNING

    def test_nonconvergence_exit_code(self, tmp_path):
        code = main(["meanfield", "fig3-ackley", "-o", str(tmp_path), "--set", "meanfield.max_iter=5",
                     "--set", "meanfield.h=0.05"])
        assert code == EXIT_NONCONVERGED

    def test_meanfield_dim_error(self, tmp_path):
        assert main(["meanfield", "table1-N50-x0", "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_console_script(self, tmp_path):
        env = dict(os.environ, CBO_WORKERS="1")
        res = subprocess.run([sys.executable, "-m", "cbo.cli", "describe", "table4-alpha50-x0"],
                             capture_output=True, text=True, env=env, cwd=tmp_path)
        assert res.returncode == 0 and "alpha: 50.0" in res.stdout
        assert Path(sys.executable).exists()
