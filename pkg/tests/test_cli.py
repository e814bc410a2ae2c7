"""Command-line interface tests: subcommands, artifacts, exit codes."""
import json

import pytest

from kvpack import load_trace
from kvpack.cli import EXIT_CONFIG, EXIT_OK, main


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "workload": {"duration_slots": 25},
        "sim": {"seed": 3},
    }))
    return str(path)


class TestGenTrace:
    def test_writes_loadable_trace(self, tmp_path, small_config):
        out = tmp_path / "out"
        code = main(["gen-trace", "--config", small_config,
                     "--out", str(out)])
        assert code == EXIT_OK
        trace = load_trace(str(out / "trace.csv"))
        assert len(trace) > 0

    def test_seed_override_changes_trace(self, tmp_path, small_config):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gen-trace", "--config", small_config, "--out", str(a)])
        main(["gen-trace", "--config", small_config, "--out", str(b),
              "--seed", "99"])
        assert ((a / "trace.csv").read_text()
                != (b / "trace.csv").read_text())


class TestSimulate:
    def test_writes_metrics_and_summary(self, tmp_path, small_config):
        out = tmp_path / "out"
        code = main(["simulate", "--config", small_config, "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "metrics.csv").read_text().startswith(
            "slot,active_gpus,migrations,deferred,forced,"
            "used_bytes,capacity_bytes\n")
        summary = json.loads((out / "summary.json").read_text())
        assert summary["scheduler"] == "mell"
        assert summary["config"]["sim"]["seed"] == 3

    def test_missing_trace_exits_one(self, tmp_path, small_config):
        code = main(["simulate", "--config", small_config,
                     "--out", str(tmp_path),
                     "--trace", str(tmp_path / "absent.csv")])
        assert code == EXIT_CONFIG

    def test_invalid_config_exits_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"sim": {"bogus_key": 1}}')
        code = main(["simulate", "--config", str(bad),
                     "--out", str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_reruns_are_byte_identical(self, tmp_path, small_config):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", small_config, "--out", str(a)])
        main(["simulate", "--config", small_config, "--out", str(b)])
        assert ((a / "metrics.csv").read_bytes()
                == (b / "metrics.csv").read_bytes())
        assert ((a / "summary.json").read_bytes()
                == (b / "summary.json").read_bytes())

    def test_no_batching_flag_is_recorded(self, tmp_path, small_config):
        out = tmp_path / "out"
        main(["simulate", "--config", small_config, "--out", str(out),
              "--no-batching"])
        summary = json.loads((out / "summary.json").read_text())
        assert summary["batching"] is False


class TestCompare:
    def test_four_schedulers_four_files_one_table(self, tmp_path,
                                                  small_config, capsys):
        out = tmp_path / "out"
        code = main(["compare", "--config", small_config, "--out", str(out),
                     "--schedulers", "mell,bf,wf,lb"])
        assert code == EXIT_OK
        for kind in ("mell", "bf", "wf", "lb"):
            assert (out / f"metrics_{kind}.csv").exists()
            assert (out / f"summary_{kind}.json").exists()
        table = json.loads((out / "comparison.json").read_text())
        assert len(table["rows"]) == 4
        assert "mell" in capsys.readouterr().out

    def test_unknown_scheduler_exits_one(self, tmp_path, small_config):
        code = main(["compare", "--config", small_config,
                     "--out", str(tmp_path), "--schedulers", "mell,fifo"])
        assert code == EXIT_CONFIG


class TestVerify:
    def test_quick_suite_passes(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["verify", "--out", str(out), "--quick",
                     "--seeds", "2", "--max-requests", "8"])
        assert code == EXIT_OK
        report = json.loads((out / "verification.json").read_text())
        assert report["passed"]
        assert len(report["checks"]) == 9
        stdout = capsys.readouterr().out
        assert stdout.count("PASS") == 9
        assert "FAIL" not in stdout
