"""Command-line interface smoke tests."""

import json
import subprocess

import pytest
from click.testing import CliRunner

from faultline.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def cli_artifacts(tmp_path_factory):
    """One healthy sim, one trained model, one injected sim, via the CLI."""
    base = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    healthy_dir = base / "healthy"
    res = runner.invoke(main, ["simulate", "--out", str(healthy_dir),
                               "--duration", "43200", "--seed", "1"])
    assert res.exit_code == 0, res.output

    model_path = base / "model.npz"
    res = runner.invoke(main, [
        "train", "--metrics", str(healthy_dir / "metrics.jsonl"),
        "--train-end", "43200", "--model-out", str(model_path),
        "--epochs", "40", "--seed", "0"])
    assert res.exit_code == 0, res.output

    injected_dir = base / "injected"
    res = runner.invoke(main, [
        "simulate", "--out", str(injected_dir), "--duration", "7200",
        "--kind", "cpu_spike", "--pod", "media-service",
        "--start", "1800", "--end", "7200", "--magnitude", "0.8",
        "--install", "media-service:1800:codec@3.1.0",
        "--install", "compose-post-service:1200:decoy@2.0.0",
        "--seed", "7"])
    assert res.exit_code == 0, res.output

    return {"base": base, "healthy": healthy_dir, "injected": injected_dir,
            "model": model_path}


class TestHelp:
    def test_group_lists_commands(self, runner):
        res = runner.invoke(main, ["--help"])
        assert res.exit_code == 0
        for cmd in ("simulate", "train", "detect", "diagnose", "evaluate",
                    "grid", "trials"):
            assert cmd in res.output

    def test_subcommand_help(self, runner):
        for cmd in ("evaluate", "grid", "trials"):
            res = runner.invoke(main, [cmd, "--help"])
            assert res.exit_code == 0, cmd


class TestSimulate:
    def test_writes_all_artifacts(self, cli_artifacts):
        for name in ("metrics.jsonl", "spans.jsonl", "installs.jsonl",
                     "ground_truth.json"):
            assert (cli_artifacts["healthy"] / name).exists()

    def test_injection_needs_target_and_interval(self, runner, tmp_path):
        res = runner.invoke(main, ["simulate", "--out", str(tmp_path),
                                   "--kind", "cpu_spike"])
        assert res.exit_code != 0
        assert "--pod" in res.output


class TestDetect:
    def test_reports_flag_count(self, runner, cli_artifacts):
        res = runner.invoke(main, [
            "detect", "--metrics",
            str(cli_artifacts["injected"] / "metrics.jsonl"),
            "--model", str(cli_artifacts["model"])])
        assert res.exit_code == 0, res.output
        assert "windows flagged:" in res.output
        assert "alert: pod=media-service" in res.output

    def test_missing_model_path(self, runner, cli_artifacts):
        res = runner.invoke(main, [
            "detect", "--metrics",
            str(cli_artifacts["healthy"] / "metrics.jsonl"),
            "--model", "/nonexistent/model.npz"])
        assert res.exit_code != 0


class TestDiagnose:
    def test_emits_report_json(self, runner, cli_artifacts, tmp_path):
        report_path = tmp_path / "report.json"
        res = runner.invoke(main, [
            "diagnose",
            "--metrics", str(cli_artifacts["injected"] / "metrics.jsonl"),
            "--spans", str(cli_artifacts["injected"] / "spans.jsonl"),
            "--installs", str(cli_artifacts["injected"] / "installs.jsonl"),
            "--model", str(cli_artifacts["model"]),
            "--report", str(report_path)])
        assert res.exit_code == 0, res.output
        printed = json.loads(res.output)
        assert printed["status"] == "diagnosed"
        assert printed["chosen"]["ts"] == 1800
        assert printed["chosen"]["service"] == "media-service"
        on_disk = json.loads(report_path.read_text())
        assert on_disk == printed


class TestConfigPlumbing:
    def test_config_file_applies(self, runner, cli_artifacts, tmp_path):
        conf = tmp_path / "pipeline.conf"
        conf.write_text("tau = 1\n")
        res = runner.invoke(main, [
            "detect", "--config", str(conf),
            "--metrics", str(cli_artifacts["injected"] / "metrics.jsonl"),
            "--model", str(cli_artifacts["model"])])
        assert res.exit_code == 0, res.output

    def test_fingerprint_mismatch_is_a_clean_error(self, cli_artifacts,
                                                   tmp_path):
        conf = tmp_path / "pipeline.conf"
        conf.write_text("w_s = 450\ns_s = 30\n")
        proc = subprocess.run(
            ["faultline", "detect", "--config", str(conf),
             "--metrics", str(cli_artifacts["healthy"] / "metrics.jsonl"),
             "--model", str(cli_artifacts["model"])],
            capture_output=True, text=True)
        assert proc.returncode == 1
        assert proc.stderr.startswith("error:")
