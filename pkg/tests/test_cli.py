"""
Tests for the command-line entry point.
"""

import os
import subprocess
import sys
from unittest.mock import patch

import pytest
from app.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main
from app.errors import SimulationError, UnderResolvedError
from app.models import RunReport

LAB_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "lab")


def fake_report(passed: bool) -> RunReport:
    return RunReport(
        experiment="oscint",
        seed=0,
        config={},
        columns=["lambda", "norm"],
        rows=[[8.0, 0.5]],
        verdicts={"upper_bound": passed},
        passed=passed,
    )


class TestMain:
    """Test cases for main() exit codes and outputs."""

    def test_selftest_passes(self, tmp_path, capsys):
        """Test that the self test exits 0 and writes its CSV and JSON."""
        code = main(["selftest", "--out", str(tmp_path), "--seed", "3"])
        assert code == EXIT_PASS
        assert (tmp_path / "selftest.csv").exists()
        assert (tmp_path / "selftest.json").exists()
        out = capsys.readouterr().out
        assert "✓" in out
        assert "selftest passed" in out

    def test_formats_subset(self, tmp_path):
        """Test that --formats limits the files written."""
        assert main(["selftest", "--out", str(tmp_path), "--formats", "csv"]) == EXIT_PASS
        assert sorted(p.name for p in tmp_path.iterdir()) == ["selftest.csv"]

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        """Test that a misspelled config key exits 2 and names the line."""
        path = tmp_path / "bad.conf"
        path.write_text("experiment = oscint\noscint.lamdas = 8, 16\n")
        assert main(["oscint", "--config", str(path)]) == EXIT_CONFIG
        assert "line 2" in capsys.readouterr().err

    def test_experiment_mismatch(self, tmp_path):
        """Test that a config for another experiment exits 2."""
        path = tmp_path / "other.conf"
        path.write_text("experiment = resolvent\n")
        assert main(["oscint", "--config", str(path)]) == EXIT_CONFIG

    def test_experiment_from_command_line(self, tmp_path):
        """Test that a config without an experiment line takes it from the command."""
        path = tmp_path / "selftest.conf"
        path.write_text("selftest.triples = 20\n")
        assert main(["selftest", "--config", str(path), "--out", str(tmp_path)]) == EXIT_PASS

    def test_missing_config_file(self, tmp_path):
        """Test that an unreadable config file exits 2."""
        assert main(["selftest", "--config", str(tmp_path / "absent.conf")]) == EXIT_CONFIG

    @pytest.mark.parametrize(
        "argv",
        [
            ["selftest", "--formats", "csv,pdf"],
            ["selftest", "--seed", "-1"],
            ["bogus"],
        ],
    )
    def test_argument_errors(self, argv):
        """Test that argparse rejects bad arguments with status 2."""
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2

    @patch("app.cli.run")
    def test_failed_verdict_exits_1(self, mock_run, tmp_path):
        """Test that a failing verdict exits 1 but still writes the report."""
        mock_run.return_value = fake_report(passed=False)
        assert main(["oscint", "--out", str(tmp_path)]) == EXIT_FAIL
        assert (tmp_path / "oscint.csv").read_text().startswith("lambda,norm\n")

    @patch("app.cli.run")
    def test_resolution_error_exits_2(self, mock_run, tmp_path):
        """Test that under-resolved runs count as configuration errors."""
        mock_run.side_effect = UnderResolvedError("oscint: grid too coarse")
        assert main(["oscint", "--out", str(tmp_path)]) == EXIT_CONFIG

    @patch("app.cli.run")
    def test_simulation_error_exits_1(self, mock_run, tmp_path, capsys):
        """Test that a run that breaks down exits 1."""
        mock_run.side_effect = SimulationError("dampedwave: non-finite state")
        assert main(["dampedwave", "--out", str(tmp_path)]) == EXIT_FAIL
        assert "non-finite state" in capsys.readouterr().err

    @patch("app.cli.emit")
    @patch("app.cli.run")
    def test_write_error_exits_1(self, mock_run, mock_emit, tmp_path):
        """Test that an unwritable output exits 1."""
        mock_run.return_value = fake_report(passed=True)
        mock_emit.side_effect = OSError(13, "cannot write report file x: Permission denied")
        assert main(["oscint", "--out", str(tmp_path)]) == EXIT_FAIL

    @patch("app.cli.emit")
    @patch("app.cli.run")
    def test_serialization_error_exits_1(self, mock_run, mock_emit, tmp_path, capsys):
        """Test that a report that cannot be serialized exits 1 with a message."""
        mock_run.return_value = fake_report(passed=True)
        mock_emit.side_effect = TypeError("Object of type complex is not JSON serializable")
        assert main(["oscint", "--out", str(tmp_path)]) == EXIT_FAIL
        assert "could not write outputs" in capsys.readouterr().err


@pytest.mark.integration
class TestSubprocess:
    """Test cases for running the CLI as a module."""

    def run_cli(self, *args):
        env = dict(os.environ, PYTHONPATH=LAB_DIR)
        return subprocess.run(
            [sys.executable, "-m", "app.cli", *args],
            cwd=LAB_DIR,
            env=env,
            capture_output=True,
            text=True,
            timeout=300,
        )

    def test_selftest_module(self, tmp_path):
        """Test `python -m app.cli selftest` end to end."""
        result = self.run_cli("selftest", "--out", str(tmp_path))
        assert result.returncode == 0, result.stderr
        assert "Wrote" in result.stdout
        assert (tmp_path / "selftest.json").exists()

    def test_bad_config_module(self, tmp_path):
        """Test that a bad config exits 2 from the module entry point."""
        path = tmp_path / "bad.conf"
        path.write_text("experiment = selftest\nseed = many\n")
        result = self.run_cli("selftest", "--config", str(path))
        assert result.returncode == 2
        assert "seed" in result.stderr

    def test_version(self):
        """Test that --version prints the program name."""
        result = self.run_cli("--version")
        assert result.returncode == 0
        assert result.stdout.startswith("tubelab ")
