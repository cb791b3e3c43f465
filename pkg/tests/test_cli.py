"""CLI: exit codes, CSV schemas, manifests, determinism."""
import csv
import json
from pathlib import Path

import numpy as np
import pytest

from wpiot.cli import (
    ANALYZE_COLUMNS,
    SIMULATE_COLUMNS,
    VALIDATE_COLUMNS,
    ExperimentSpec,
    UsageError,
    main,
)
from wpiot.metrics import analyze
from wpiot.numerics import ToleranceConfig
from wpiot.simulator import run
from wpiot.solver import profile_for, solve_coupled
from wpiot.system import PolicyKind

from .conftest import make_config


def read_csv(path: Path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


WEAK = ["--set", "hap_power_w=0.004"]


class TestExitCodes:
    def test_empty_grid_usage_error(self, tmp_path):
        rc = main(["analyze", "--sweep", "rate", "--grid", "", "--out", str(tmp_path)])
        assert rc == 2

    def test_unknown_policy_usage_error(self, tmp_path):
        rc = main(["analyze", "--policy", "psychic", "--out", str(tmp_path)])
        assert rc == 2

    def test_baseline_policy_rejected_for_analyze(self, tmp_path):
        rc = main(["analyze", "--policy", "round-robin", "--out", str(tmp_path)])
        assert rc == 2

    def test_bad_config_file(self, tmp_path):
        bad = tmp_path / "cfg.json"
        bad.write_text("{\"num_iods\": 2}")
        rc = main(["analyze", "--config", str(bad), "--out", str(tmp_path)])
        assert rc == 2

    def test_trace_refuses_big_runs(self, tmp_path):
        rc = main(["trace", "--blocks", "200000", "--out", str(tmp_path)])
        assert rc == 2

    def test_validation_failure_is_exit_one(self, tmp_path):
        # strong coupling: the decoupled analysis is measurably biased, so
        # the 3-sigma gate trips at moderate block counts
        rc = main([
            "validate", "--preset", "s1", "--hap-power", "0.02",
            "--sweep", "rate", "--grid", "2", "--blocks", "2000000",
            "--seed", "5", "--out", str(tmp_path),
        ])
        assert rc == 1
        _, rows = read_csv(tmp_path / "validate.csv")
        assert any(r[-1] == "FAIL" for r in rows)

    def test_solver_nonconvergence_is_exit_three(self, tmp_path, monkeypatch):
        import wpiot.cli as cli

        real = cli.solve_coupled

        def crippled(cfg, policy, tol=None, **kw):
            return real(cfg, policy, ToleranceConfig(max_iterations=1,
                                                     solver_residual_tol=1e-15), **kw)

        monkeypatch.setattr(cli, "solve_coupled", crippled)
        rc = main(["analyze", "--scale", "--out", str(tmp_path)])
        assert rc == 3
        _, rows = read_csv(tmp_path / "analyze.csv")
        assert all(r[ANALYZE_COLUMNS.index("converged")] == "0" for r in rows)


class TestAnalyzeCommand:
    def test_rows_and_columns(self, tmp_path):
        rc = main([
            "analyze", "--preset", "s1", "--scale", *WEAK,
            "--sweep", "rate", "--grid", "0.5,1,1.5",
            "--out", str(tmp_path),
        ])
        assert rc == 0
        header, rows = read_csv(tmp_path / "analyze.csv")
        assert tuple(header) == ANALYZE_COLUMNS
        assert len(rows) == 6  # 3 grid points x 2 policies
        assert [r[1] for r in rows[::2]] == ["0.5", "1", "1.5"]

    def test_manifest_contents(self, tmp_path):
        main(["analyze", "--preset", "s2", "--scale", "--out", str(tmp_path)])
        doc = json.loads((tmp_path / "manifest.json").read_text())
        assert doc["command"] == "analyze"
        assert doc["preset"] == "s2"
        assert doc["config"]["num_iods"] == 3  # scaled
        assert doc["config"]["num_levels"] == 50
        assert {"numpy", "scipy", "numba", "python"} <= set(doc["versions"])
        assert doc["seed"] == 0

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["analyze", "--scale", *WEAK, "--sweep", "rate",
                  "--grid", "1,2", "--out", str(out)])
        assert (a / "analyze.csv").read_bytes() == (b / "analyze.csv").read_bytes()


class TestSimulateCommand:
    def test_all_policies_and_ses(self, tmp_path):
        rc = main([
            "simulate", "--preset", "s1", "--scale", *WEAK,
            "--policy", "all", "--blocks", "50000", "--out", str(tmp_path),
        ])
        assert rc == 0
        header, rows = read_csv(tmp_path / "simulate.csv")
        assert tuple(header) == SIMULATE_COLUMNS
        assert {r[2] for r in rows} == {"throughput", "fairness", "round-robin", "random"}
        se_col = SIMULATE_COLUMNS.index("outage_se")
        assert all(float(r[se_col]) > 0 for r in rows)

    def test_deterministic_with_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["simulate", "--scale", "--policy", "rr", "--blocks", "20000",
                  "--seed", "7", "--out", str(out)])
        assert (a / "simulate.csv").read_bytes() == (b / "simulate.csv").read_bytes()

    def test_workers_do_not_change_rows(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out, workers in ((a, "1"), (b, "2")):
            main(["simulate", "--scale", "--policy", "to", "--blocks", "20000",
                  "--sweep", "rate", "--grid", "1,2", "--workers", workers,
                  "--out", str(out)])
        assert (a / "simulate.csv").read_bytes() == (b / "simulate.csv").read_bytes()


class TestValidateCommand:
    def test_passes_at_weak_coupling(self, tmp_path):
        rc = main([
            "validate", "--preset", "s1", "--sweep", "rate", "--grid", "1,2",
            "--blocks", "400000", "--out", str(tmp_path),
        ])
        assert rc == 0
        header, rows = read_csv(tmp_path / "validate.csv")
        assert tuple(header) == VALIDATE_COLUMNS
        assert all(r[-1] == "PASS" for r in rows)
        sig = VALIDATE_COLUMNS.index("outage_sigma")
        assert all(float(r[sig]) > 0 for r in rows)

    def test_mismatched_level_count_fails_gate(self):
        """Negative control: analysis at K=50 vs simulation at K=10."""
        cfg_ana = make_config(
            num_iods=2, distances=(8.0, 10.0), num_levels=50,
            hap_power=0.01, battery_capacity=5e-4, rate_req=2.0, max_wait=10,
        )
        cfg_sim = cfg_ana.with_overrides(num_levels=10)
        sol = solve_coupled(cfg_ana, PolicyKind.THROUGHPUT, ToleranceConfig())
        rep = analyze(cfg_ana, PolicyKind.THROUGHPUT, sol, profile_for(cfg_ana, sol))
        sim = run(cfg_sim, PolicyKind.THROUGHPUT, 500_000, seed=3)
        assert abs(rep.outage_total - sim.outage_rate) > 3 * sim.outage_se_batch


class TestSweepPh:
    def test_writes_both_csvs(self, tmp_path):
        rc = main([
            "sweep-ph", "--preset", "s1", "--policy", "all",
            "--grid", "0.002,0.004", "--sweep", "hap-power",
            "--blocks", "30000", "--out", str(tmp_path),
        ])
        assert rc == 0
        ha, rows_a = read_csv(tmp_path / "analyze.csv")
        hs, rows_s = read_csv(tmp_path / "simulate.csv")
        assert tuple(ha) == ANALYZE_COLUMNS
        assert tuple(hs) == SIMULATE_COLUMNS
        assert len(rows_a) == 4      # 2 powers x 2 analyzable policies
        assert len(rows_s) == 8      # 2 powers x 4 policies
        assert {r[0] for r in rows_a} == {"hap-power"}


class TestTraceCommand:
    def test_trace_columns_and_energy_causality(self, tmp_path):
        rc = main([
            "trace", "--preset", "s1", "--set", "hap_power_w=0.05",
            "--policy", "fairness", "--blocks", "300", "--out", str(tmp_path),
        ])
        assert rc == 0
        header, rows = read_csv(tmp_path / "trace.csv")
        L = 5
        assert header == (
            ["block", "selected", "success", "outage"]
            + [f"energy_{i}" for i in range(L)]
            + [f"wait_{i}" for i in range(L)]
        )
        assert len(rows) == 300
        cap = 5e-4
        for r in rows:
            for cell in r[4:4 + L]:
                assert 0.0 <= float(cell) <= cap + 1e-15
            for cell in r[4 + L:]:
                assert 1 <= int(cell) <= 50


class TestSpecPlumbing:
    def test_num_iods_sweep_with_preset_rule(self, tmp_path):
        rc = main([
            "analyze", "--preset", "equal10", "--scale", *WEAK,
            "--sweep", "num-iods", "--grid", "2,4,6",
            "--policy", "to", "--out", str(tmp_path),
        ])
        assert rc == 0
        _, rows = read_csv(tmp_path / "analyze.csv")
        assert [r[1] for r in rows] == ["2", "4", "6"]

    def test_num_iods_sweep_from_file_truncates_only(self, tmp_path):
        cfg = make_config()
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        rc = main([
            "analyze", "--config", str(path), "--sweep", "num-iods",
            "--grid", "1,2,3", "--out", str(tmp_path),
        ])
        assert rc == 2  # config lists two distances; cannot grow to 3

    def test_unsorted_grid_rejected(self):
        with pytest.raises(UsageError):
            ExperimentSpec(
                base=make_config(), sweep="rate", grid=(2.0, 1.0),
                policies=(PolicyKind.THROUGHPUT,), blocks=1, seed=0,
                mode="discretized", rr_skip_empty=False,
                out_dir=Path("x"), workers=1,
            )

    def test_point_seed_stable(self):
        spec = ExperimentSpec(
            base=make_config(), sweep="rate", grid=(1.0,),
            policies=(PolicyKind.THROUGHPUT,), blocks=1, seed=11,
            mode="discretized", rr_skip_empty=False,
            out_dir=Path("x"), workers=1,
        )
        a = spec.point_seed(0, PolicyKind.THROUGHPUT)
        assert a == spec.point_seed(0, PolicyKind.THROUGHPUT)
        assert a != spec.point_seed(1, PolicyKind.THROUGHPUT)
        assert a != spec.point_seed(0, PolicyKind.FAIRNESS)
