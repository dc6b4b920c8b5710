import csv
import json
import os
import subprocess
import sys

import pytest

from bimlab import cli


def run_cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "bimlab.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


class TestConfigResolution:
    def test_defaults_applied(self):
        cfg = cli.resolve_config("chain-law", {}, {})
        assert cfg["steps"] == 1_000_000 and cfg["seed"] == 1

    def test_unknown_key_rejected(self):
        with pytest.raises(cli.ConfigError):
            cli.resolve_config("chain-law", {"bogus": 1}, {})
        with pytest.raises(cli.ConfigError):
            cli.resolve_config("chain-law", {}, {"nope": "2"})

    def test_overrides_win(self):
        cfg = cli.resolve_config("chain-law", {"steps": 5}, {"steps": "9"})
        assert cfg["steps"] == 9

    def test_list_parsing(self):
        cfg = cli.resolve_config("chain-law", {}, {"p_values": "1,2.5"})
        assert cfg["p_values"] == [1.0, 2.5]

    def test_bad_value_rejected(self):
        with pytest.raises(cli.ConfigError):
            cli.resolve_config("chain-law", {}, {"steps": "abc"})


class TestRunnerInProcess:
    def test_kernel_check_passes_and_writes(self, tmp_path):
        rc = cli.run("kernel-check", overrides={"kernels": "50", "tricky": "10"},
                     seed=7, out_dir=str(tmp_path), check=True)
        assert rc == 0
        report = json.load(open(tmp_path / "report.json"))
        assert report["check_passed"] is True
        assert report["experiment"] == "kernel-check"
        assert report["config"]["kernels"] == 50
        rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
        assert {r["metric"] for r in rows} >= {"identity_violations",
                                               "coupling_violations"}
        assert all(r["param_hash"] == report["param_hash"] for r in rows)

    def test_reports_reproduce_bitwise(self, tmp_path):
        outs = []
        for d in ("a", "b"):
            out = tmp_path / d
            rc = cli.run("chain-law", overrides={"steps": "20000"},
                         seed=11, out_dir=str(out))
            assert rc == 0
            rep = json.load(open(out / "report.json"))
            outs.append({m["name"]: m["value"] for m in rep["metrics"]})
        assert outs[0] == outs[1]

    def test_worker_count_does_not_change_estimates(self, tmp_path):
        vals = []
        for d, workers in (("w1", 1), ("w2", 2)):
            out = tmp_path / d
            rc = cli.run("chain-law", overrides={"steps": "20000"}, seed=3,
                         workers=workers, out_dir=str(out))
            assert rc == 0
            rep = json.load(open(out / "report.json"))
            vals.append({m["name"]: m["value"] for m in rep["metrics"]})
        assert vals[0] == vals[1]

    def test_config_error_exit_code(self, tmp_path):
        rc = cli.run("chain-law", overrides={"bogus": "1"}, out_dir=str(tmp_path))
        assert rc == 1

    def test_missing_config_file(self, tmp_path):
        rc = cli.run("chain-law", config_path=str(tmp_path / "none.json"))
        assert rc == 1

    def test_config_file_used(self, tmp_path):
        cfgp = tmp_path / "c.json"
        cfgp.write_text(json.dumps({"steps": 12345}))
        rc = cli.run("chain-law", config_path=str(cfgp), seed=2,
                     out_dir=str(tmp_path))
        assert rc == 0
        rep = json.load(open(tmp_path / "report.json"))
        assert rep["config"]["steps"] == 12345

    def test_failed_check_exit_code(self, tmp_path):
        # an impossible acceptance bar forces exit 3 under --check
        rc = cli.run("hitting-bench",
                     overrides={"samples": "2000", "spread_tol": "-0.9",
                                "d_values": "0.0625,0.00390625"},
                     seed=5, out_dir=str(tmp_path), check=True)
        assert rc == 3

    def test_env_worker_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BIMLAB_WORKERS", "1")
        rc = cli.run("chain-law", overrides={"steps": "5000"}, seed=2,
                     out_dir=str(tmp_path))
        assert rc == 0
        rep = json.load(open(tmp_path / "report.json"))
        assert rep["config"]["workers"] == 1


class TestSubprocessSurface:
    def test_malformed_config_diagnostic_on_stderr(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        res = run_cli(["chain-law", "--config", str(bad)], cwd=str(tmp_path))
        assert res.returncode == 1
        assert "config error" in res.stderr

    def test_stdout_is_machine_readable_summary(self, tmp_path):
        res = run_cli(["chain-law", "--seed", "7", "--out", str(tmp_path),
                       "steps=20000"], cwd=str(tmp_path))
        assert res.returncode == 0
        summary = json.loads(res.stdout.strip().splitlines()[-1])
        assert summary["experiment"] == "chain-law"
        assert summary["seed"] == 7
        assert os.path.exists(tmp_path / "report.json")
        assert os.path.exists(tmp_path / "metrics.csv")

    def test_csv_floats_round_trip(self, tmp_path):
        res = run_cli(["chain-law", "--seed", "9", "--out", str(tmp_path),
                       "steps=20000"], cwd=str(tmp_path))
        assert res.returncode == 0
        rep = json.load(open(tmp_path / "report.json"))
        by_name = {m["name"]: m["value"] for m in rep["metrics"]}
        for row in csv.DictReader(open(tmp_path / "metrics.csv")):
            assert float(row["value"]) == by_name[row["metric"]]
