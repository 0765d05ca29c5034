"""Command-line interface: artifacts, exit codes, determinism."""

import json

import pytest

from dritc.cli import dispatch

from conftest import write_applied_inputs


def run_json(tmp_path, args, name="out.json"):
    out = tmp_path / name
    code = dispatch(args + ["--out", str(out)])
    assert code == 0, f"exit code {code} for {args}"
    return json.loads(out.read_text())


class TestEstimate:
    def test_naive_applied_aggregates(self, tmp_path, applied_inputs):
        data, config = applied_inputs
        payload = run_json(
            tmp_path,
            ["estimate", "--data", data, "--config", config, "--methods", "naive"],
        )
        (rec,) = payload["results"]
        assert rec["method"] == "naive"
        assert rec["point"] == pytest.approx(1.671, abs=5e-4)
        assert rec["ci"][0] == pytest.approx(1.358, abs=5e-4)
        assert rec["ci"][1] == pytest.approx(1.984, abs=5e-4)

    def test_all_methods_emitted(self, tmp_path, applied_inputs):
        data, config = applied_inputs
        payload = run_json(
            tmp_path, ["estimate", "--data", data, "--config", config]
        )
        methods = [r["method"] for r in payload["results"]]
        assert len(methods) == 10 and "dr_maic_logit" in methods
        for rec in payload["results"]:
            assert "error" in rec or (0 < rec["mu_treated"] < 1)

    def test_manifest_fields(self, tmp_path, applied_inputs):
        data, config = applied_inputs
        payload = run_json(
            tmp_path,
            ["estimate", "--data", data, "--config", config, "--methods", "naive"],
        )
        manifest = payload["manifest"]
        assert manifest["command"] == "estimate"
        assert data in manifest["inputs"] and config in manifest["inputs"]
        assert len(manifest["inputs"][data]) == 64  # sha256 hex
        assert manifest["version"]

    def test_determinism_excluding_timestamp(self, tmp_path, applied_inputs):
        data, config = applied_inputs
        args = ["estimate", "--data", data, "--config", config, "--methods", "naive,maic,gcomp"]
        a = run_json(tmp_path, args, "a.json")
        b = run_json(tmp_path, args, "b.json")
        a["manifest"].pop("timestamp")
        b["manifest"].pop("timestamp")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_missing_data_flag_is_usage_error(self, capsys):
        code = dispatch(["estimate", "--config", "c.json"])
        assert code == 1
        err = capsys.readouterr().err
        assert "usage" in err.lower()

    def test_unknown_method_is_usage_error(self, tmp_path, applied_inputs):
        data, config = applied_inputs
        code = dispatch(["estimate", "--data", data, "--config", config, "--methods", "nope"])
        assert code == 1

    def test_unreadable_file_is_computation_error(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"covariates": ["x1"]}')
        code = dispatch(["estimate", "--data", str(tmp_path / "missing.csv"), "--config", str(cfg)])
        assert code == 2

    def test_source_treatment_mismatch_is_computation_error(self, tmp_path):
        data = tmp_path / "bad.csv"
        data.write_text("source,treatment,outcome,x1\n1,0,1,0.5\n")
        cfg = tmp_path / "c.json"
        cfg.write_text('{"covariates": ["x1"]}')
        code = dispatch(["estimate", "--data", str(data), "--config", str(cfg)])
        assert code == 2


class TestBootstrapCommand:
    def test_ad_mode_se_composition(self, tmp_path):
        data, config = write_applied_inputs(tmp_path, m=800)
        payload = run_json(
            tmp_path,
            [
                "bootstrap", "--data", data, "--config", config,
                "--methods", "maic", "--B", "60", "--seed", "5",
            ],
        )
        (rec,) = payload["results"]
        assert rec["se"] > rec["se_g_mu1"] > 0
        assert rec["n_failed_resamples"] == 0
        assert any("conditional" in c for c in rec["caveats"])
        assert payload["manifest"]["options"]["strata"] == "sat_only"


class TestTruthCommand:
    def test_small_run(self, tmp_path):
        payload = run_json(
            tmp_path,
            ["truth", "--scenario", "KS1", "--draws", "1000000", "--seed", "3"],
        )
        assert payload["scenario"] == "KS1"
        assert 0.9 < payload["value"] < 1.3
        assert payload["manifest"]["seed"] == 3

    def test_seed_required(self, capsys):
        assert dispatch(["truth", "--scenario", "KS1"]) == 1


class TestSimulateCommand:
    def test_small_study_artifact(self, tmp_path):
        payload = run_json(
            tmp_path,
            [
                "simulate", "--scenario", "KS1", "--n", "200", "--reps", "4",
                "--B", "30", "--seed", "12", "--truth", "1.116", "--threads", "1",
            ],
        )
        assert payload["scenario"] == "KS1"
        assert len(payload["estimators"]) == 16
        assert payload["truth"] == 1.116

    def test_seed_required(self):
        assert dispatch(["simulate", "--scenario", "KS1"]) == 1


class TestCheckFeasibility:
    def test_applied_inputs_feasible(self, tmp_path, applied_inputs):
        data, config = applied_inputs
        payload = run_json(
            tmp_path, ["check-feasibility", "--data", data, "--config", config]
        )
        assert payload["feasible"] is True
        assert payload["witness_max_gap"] < 1e-6
        assert payload["entropy_balance_max_gap"] < 1e-8

    def test_infeasible_target(self, tmp_path):
        data, config = write_applied_inputs(tmp_path)
        cfg = json.loads(open(config).read())
        cfg["ad_target"]["marginals"][0] = {"kind": "normal", "mean": 500.0, "sd": 3.0}
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cfg))
        payload = run_json(
            tmp_path, ["check-feasibility", "--data", data, "--config", str(bad)]
        )
        assert payload["feasible"] is False


class TestHelp:
    def test_unknown_subcommand(self):
        assert dispatch(["frobnicate"]) == 1

    def test_help_exits_zero(self):
        assert dispatch(["--help"]) == 0
