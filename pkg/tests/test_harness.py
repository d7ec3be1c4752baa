import csv
import io
import json

import numpy as np
import pytest

from qpqsim.cli import main
from qpqsim.harness import (
    SCENARIOS,
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    Metric,
    run_scenario,
    summarize,
    trial_rng,
)

from .conftest import HELSTROM_PIN

SMALL = {
    "yu-honest": {"database_size": 100},
    "yu-bob-two-step": {"raw_length": 5000},
    "yu-alice-inconclusive-checks": {"database_size": 100},
    "chang-honest": {"database_size": 100},
    "chang-bob-counting": {"group_count": 300},
    "chang-alice-store-fake": {"database_size": 100},
    "discriminate": {"raw_length": 5000},
}


class TestConfig:
    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("nope").validate()

    def test_trials(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("discriminate", trials=0).validate()

    def test_seed_range(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("discriminate", master_seed=-1).validate()

    def test_irrelevant_parameter(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("yu-honest", params={"eta": 0.5}).validate()

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("chang-honest", params={"eta": 2.0}).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig("yu-honest", params={"raw_length": 10}).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig("chang-bob-counting", params={"group_size": 9}).validate()

    def test_missing_database_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig("yu-honest", database_path=str(tmp_path / "missing")).validate()

    def test_rejected_before_running(self, monkeypatch):
        import qpqsim.harness as h

        monkeypatch.setitem(h.RUNNERS, "discriminate", lambda *a: pytest.fail("trial ran"))
        with pytest.raises(ConfigError):
            run_scenario(ExperimentConfig("discriminate", params={"raw_length": 0}))


class TestMetric:
    def test_mean_and_stderr(self):
        m = Metric()
        m.add([1.0, 2.0])
        m.add(3.0)
        assert m.mean == pytest.approx(2.0)
        assert m.stderr == pytest.approx(np.std([1, 2, 3], ddof=1) / np.sqrt(3))
        assert m.n == 3

    def test_empty(self):
        assert np.isnan(Metric().mean)


class TestRun:
    def test_streams_independent_of_order(self):
        a = trial_rng(5, 3).random(4)
        trial_rng(5, 2).random(10)
        np.testing.assert_array_equal(a, trial_rng(5, 3).random(4))
        assert not np.array_equal(a, trial_rng(5, 4).random(4))

    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_every_scenario_runs(self, scenario):
        report = run_scenario(ExperimentConfig(scenario, trials=2, master_seed=1, params=SMALL[scenario]))
        assert report.metrics
        assert all(m["n"] >= 1 and "stderr" in m for m in report.metrics.values())
        assert report.duration_ms is not None

    def test_discriminate(self):
        report = run_scenario(ExperimentConfig("discriminate", params={"raw_length": 200_000}))
        assert report.metric("helstrom_error")["mean"] == pytest.approx(0.146447, abs=1e-6)
        assert report.metric("helstrom_error")["mean"] == pytest.approx(HELSTROM_PIN, abs=1e-12)
        assert report.verdicts == {
            "unambiguous_identify_conclusive": False,
            "unambiguous_identify_inconclusive": False,
        }
        assert report.metric("mc_guess_error")["mean"] == pytest.approx(0.1464, abs=0.005)

    def test_two_step(self):
        report = run_scenario(ExperimentConfig("yu-bob-two-step", params={"raw_length": 1_000_000}))
        assert report.metric("guess_error_rate")["mean"] == pytest.approx(0.1464, abs=0.005)
        assert report.metric("detection_rate")["mean"] == 0.0
        assert report.metric("check_reply_error_rate")["mean"] == 0.0
        assert report.verdicts["conclusive_residual_matches_alice"]

    def test_byte_identical(self):
        cfg = ExperimentConfig("chang-honest", trials=3, master_seed=42, params={"database_size": 100})
        a = run_scenario(cfg, timing=False).to_json()
        b = run_scenario(cfg, timing=False).to_json()
        assert a == b

    def test_parallel_matches_serial(self):
        params = {"database_size": 100}
        serial = run_scenario(ExperimentConfig("yu-honest", trials=4, master_seed=3, params=params), timing=False)
        parallel = run_scenario(
            ExperimentConfig("yu-honest", trials=4, master_seed=3, params=params, workers=2), timing=False
        )
        assert serial.to_json() == parallel.to_json()

    def test_database_file(self, tmp_path):
        path = tmp_path / "db.txt"
        path.write_text("01" * 50 + "\n")
        report = run_scenario(
            ExperimentConfig("yu-honest", params={"database_size": 100}, database_path=str(path))
        )
        assert report.metric("retrieval_correct")["mean"] == 1.0


class TestReportFormats:
    def test_json_schema(self):
        report = run_scenario(ExperimentConfig("discriminate", params={"raw_length": 100}))
        data = json.loads(report.to_json())
        assert set(data) == {"config", "metrics", "verdicts", "seed", "duration_ms"}
        assert set(data["metrics"]["helstrom_error"]) == {"mean", "stderr", "n"}
        assert ExperimentReport.from_json(report.to_json()) == report

    def test_csv_one_row_per_metric(self):
        report = run_scenario(ExperimentConfig("discriminate", params={"raw_length": 100}))
        rows = list(csv.reader(io.StringIO(report.to_csv())))
        assert rows[0] == ["metric", "mean", "stderr", "n"]
        assert len(rows) == 1 + len(report.metrics)


class TestSummarize:
    def test_single(self):
        report = run_scenario(ExperimentConfig("discriminate", params={"raw_length": 100}))
        rows = list(csv.DictReader(io.StringIO(summarize([report]))))
        assert len(rows) == 1

    def test_empty(self):
        assert summarize([]).strip() == "scenario,seed,trials"

    def test_mixed(self):
        a = run_scenario(ExperimentConfig("discriminate", params={"raw_length": 100}))
        b = run_scenario(ExperimentConfig("chang-bob-counting", params={"group_count": 10}))
        with pytest.raises(ValueError):
            summarize([a, b])

    def test_fraction_sweep_is_monotone(self):
        reports = [
            run_scenario(
                ExperimentConfig(
                    "yu-alice-inconclusive-checks",
                    trials=3,
                    master_seed=2,
                    params={"check_fraction": f, "database_size": 1000},
                ),
                timing=False,
            )
            for f in (0.0, 0.25, 0.5, 0.75)
        ]
        rows = list(csv.DictReader(io.StringIO(summarize(reports))))
        col = [float(r["post_drop_conclusive_fraction_mean"]) for r in rows]
        assert col == sorted(col)
        assert [float(r["check_fraction"]) for r in rows] == [0.0, 0.25, 0.5, 0.75]


class TestCli:
    def test_json_to_file(self, tmp_path):
        out = tmp_path / "r.json"
        assert main(["discriminate", "--raw-length", "1000", "--output", str(out)]) == 0
        assert json.loads(out.read_text())["metrics"]["helstrom_error"]["n"] == 1

    def test_csv_stdout(self, capsys):
        assert main(["chang-bob-counting", "--group-count", "20", "--format", "csv"]) == 0
        assert capsys.readouterr().out.startswith("metric,mean,stderr,n")

    def test_config_rejection(self, capsys):
        assert main(["yu-honest", "--eta", "0.5"]) == 2
        assert "eta" in capsys.readouterr().err

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["yu-honest", "--bogus"])
        assert exc.value.code == 2

    def test_runtime_failure(self, capsys):
        # k = 40 leaves Alice without a known bit on every attempt
        code = main(["yu-honest", "--db-size", "5", "--substrings", "40", "--check-fraction", "0", "--max-restarts", "1"])
        assert code == 3
        assert "RestartLimitExceeded" in capsys.readouterr().err

    def test_omit_timing_reproducible(self, tmp_path):
        paths = [tmp_path / "a.json", tmp_path / "b.json"]
        for p in paths:
            assert main(["yu-honest", "--db-size", "50", "--trials", "2", "--omit-timing", "--output", str(p)]) == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert json.loads(paths[0].read_text())["duration_ms"] is None

    def test_summarize(self, tmp_path, capsys):
        paths = []
        for f in ("0.25", "0.5"):
            p = tmp_path / f"r{f}.json"
            main(["yu-alice-inconclusive-checks", "--db-size", "100", "--check-fraction", f, "--output", str(p)])
            paths.append(str(p))
        assert main(["summarize", *paths]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3

    def test_summarize_missing_file(self, tmp_path):
        assert main(["summarize", str(tmp_path / "nothing.json")]) == 2
