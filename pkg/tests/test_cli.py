"""Command-line tools: exit codes, determinism, report round-trips.

Commands run in-process through ``main(argv)`` so stdout/stderr and the
exit code can be asserted cheaply; one test goes through a real
subprocess to cover the module entry point.  Determinism contract: a
repeated invocation with the same inputs and seed is byte-identical,
except for wall-clock timing fields in simulation reports.
"""

import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from hepdose.cli import main
from hepdose.data_io import (chart_from_observations, parse_report,
                             write_chart)
from hepdose.dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, PatientParams,
                              simulate)
from hepdose.estimation import EstimateResult, ObservationSeries
from hepdose.evaluation import RocReport
from hepdose.simulator import B_BAR_5, CohortReport

TRUE = PatientParams(alpha=0.5, b=float(B_BAR_5[3]), k=30.0, yb=30.0,
                     y0=30.0, yb0=30.0)


def write_demo_chart(path, seed=11, hours=72, weight=True):
    rng = np.random.default_rng(seed)
    doses = rng.uniform(1.0, 8.0, hours)
    traj = simulate(TRUE, doses, DEFAULT_GAMMAS, DEFAULT_DOMAINS)
    times = np.arange(4, hours + 1, 4)
    values = np.clip(traj.y[times] + rng.laplace(0, 2.0, times.size),
                     1.0, 149.0)
    obs = ObservationSeries(doses=doses, times=times, values=values,
                            noise_scale=2.0).validate()
    record = chart_from_observations(
        obs, patient_id="demo",
        weight_kg=82.0 if weight else None,
        bleed_risk="low" if weight else None)
    with open(path, "w") as handle:
        write_chart(record, handle)
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


WALL_FIELDS = ("predict_time_total", "control_time_total", "max_cycle_time",
               "predict_time", "control_time", "wall_time_s")


def strip_wall_times(doc):
    doc = copy.deepcopy(doc)

    def scrub(node):
        if isinstance(node, dict):
            for key in list(node):
                if key in WALL_FIELDS:
                    node[key] = 0.0
                else:
                    scrub(node[key])
        elif isinstance(node, list):
            for item in node:
                scrub(item)
    scrub(doc)
    return doc


@pytest.fixture(scope="module")
def chart(tmp_path_factory):
    path = tmp_path_factory.mktemp("charts") / "demo.csv"
    return str(write_demo_chart(path))


@pytest.fixture(scope="module")
def bare_chart(tmp_path_factory):
    path = tmp_path_factory.mktemp("charts") / "bare.csv"
    return str(write_demo_chart(path, weight=False))


# ---------------------------------------------------------------------------
# estimate


class TestEstimate:
    def test_writes_parseable_report(self, capsys, chart, tmp_path):
        out = str(tmp_path / "est.json")
        code, _, err = run_cli(capsys, "estimate", chart, "--out", out)
        assert code == 0 and err == ""
        result = parse_report(out)
        assert isinstance(result, EstimateResult)
        assert result.params.alpha == TRUE.alpha
        assert result.params.b == pytest.approx(TRUE.b, rel=1e-6)

    def test_deterministic_apart_from_wall_times(self, capsys, chart):
        first = run_cli(capsys, "estimate", chart)
        second = run_cli(capsys, "estimate", chart)
        assert first[0] == second[0] == 0
        assert strip_wall_times(json.loads(first[1])) == \
            strip_wall_times(json.loads(second[1]))

    def test_grid_method_agrees_on_map_scenario(self, capsys, chart,
                                                tmp_path):
        a = str(tmp_path / "benders.json")
        b = str(tmp_path / "grid.json")
        assert run_cli(capsys, "estimate", chart, "--method", "benders",
                       "--k-mesh-points", "16", "--out", a)[0] == 0
        assert run_cli(capsys, "estimate", chart, "--method", "grid",
                       "--k-mesh-points", "16", "--out", b)[0] == 0
        ra, rb = parse_report(a), parse_report(b)
        assert (ra.params.alpha, ra.params.b) == (rb.params.alpha,
                                                  rb.params.b)

    def test_malformed_chart_exits_2_with_row_number(self, capsys,
                                                     tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("hour,dose_iu,aptt_s\n0,5.0,\n2,5.0,40.0\n1,5.0,\n")
        code, _, err = run_cli(capsys, "estimate", str(bad))
        assert code == 2
        message = json.loads(err)
        assert message["error"] == "ChartValidationError"
        assert "row 4" in message["message"]

    def test_missing_file_exits_2(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "estimate",
                               str(tmp_path / "absent.csv"))
        assert code == 2
        assert json.loads(err)["error"] == "FileNotFoundError"


# ---------------------------------------------------------------------------
# dose


class TestDose:
    def test_scenario_policy_plan(self, capsys, chart):
        code, out, _ = run_cli(capsys, "dose", chart, "--policy", "ptc-sg10",
                               "--horizon", "4")
        assert code == 0
        body = json.loads(out)
        assert body["plan"]["horizon"] == 4
        assert len(body["plan"]["doses"]) == 4
        assert body["low_information"] is False
        weights = [s["weight"] for s in body["scenario_weights"]]
        assert sum(weights) == pytest.approx(1.0)

    def test_deterministic(self, capsys, chart):
        first = run_cli(capsys, "dose", chart)
        second = run_cli(capsys, "dose", chart)
        assert first == second and first[0] == 0

    def test_policy_loss_suffix(self, capsys, chart):
        code, out, _ = run_cli(capsys, "dose", chart,
                               "--policy", "ptc-sg10:indicator")
        assert code == 0
        assert json.loads(out)["loss"] == "indicator"

    def test_mle_policy_reports_map(self, capsys, chart):
        code, out, _ = run_cli(capsys, "dose", chart, "--policy", "ptc-mle")
        assert code == 0
        body = json.loads(out)
        assert body["map"]["alpha"] == TRUE.alpha
        assert len(body["plan"]["doses"]) == 6

    def test_naive_policy_constant_block(self, capsys, chart):
        code, out, _ = run_cli(capsys, "dose", chart, "--policy", "naive")
        assert code == 0
        body = json.loads(out)
        assert body["label"] in ("sub", "therapeutic", "super")
        assert body["band"]["low"] < body["band"]["high"]
        assert len(set(body["plan"]["doses"])) == 1

    def test_weight_policy_needs_pragmas(self, capsys, chart, bare_chart):
        code, out, _ = run_cli(capsys, "dose", chart, "--policy", "weight")
        assert code == 0
        body = json.loads(out)
        assert set(body) >= {"bolus", "rate", "hold_hours", "plan"}
        code, _, err = run_cli(capsys, "dose", bare_chart,
                               "--policy", "weight")
        assert code == 2
        assert "weight_kg" in json.loads(err)["message"]

    def test_unknown_policy_exits_2(self, capsys, chart):
        code, _, err = run_cli(capsys, "dose", chart, "--policy", "magic")
        assert code == 2
        assert json.loads(err)["error"] == "InvalidParameterError"


# ---------------------------------------------------------------------------
# simulate


@pytest.fixture(scope="module")
def sim_out(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    report = str(root / "report.json")
    cohort = str(root / "cohort.json")
    code = main(["simulate", "--synthetic", "2",
                 "--policies", "naive", "weight",
                 "--seed", "3", "--total-hours", "96",
                 "--replicates", "1", "--warmstart", "48",
                 "--save-cohort", cohort, "--out", report])
    assert code == 0
    return report, cohort


class TestSimulate:
    def test_report_parses_with_both_arms(self, sim_out):
        report, _ = sim_out
        parsed = parse_report(report)
        assert isinstance(parsed, CohortReport)
        assert set(parsed.policy_names) == {"naive", "weight_based"}
        assert len(parsed.rows) == 2 * 2        # patients x arms
        for agg in parsed.aggregates.values():
            assert 0.0 <= agg["time_in_control"] <= 1.0

    def test_saved_cohort_feeds_a_second_run(self, sim_out, tmp_path,
                                             capsys):
        report, cohort = sim_out
        again = str(tmp_path / "again.json")
        code, _, _ = run_cli(capsys, "simulate", cohort,
                             "--policies", "naive", "weight",
                             "--seed", "3", "--total-hours", "96",
                             "--replicates", "1", "--warmstart", "48",
                             "--out", again)
        assert code == 0
        first = strip_wall_times(json.loads(open(report).read()))
        second = strip_wall_times(json.loads(open(again).read()))
        assert first == second

    def test_cohort_and_synthetic_are_exclusive(self, capsys, sim_out):
        _, cohort = sim_out
        code, _, err = run_cli(capsys, "simulate", cohort,
                               "--synthetic", "2")
        assert code == 2
        assert "either" in json.loads(err)["message"]

    def test_requires_some_cohort_source(self, capsys):
        code, _, err = run_cli(capsys, "simulate")
        assert code == 2


# ---------------------------------------------------------------------------
# evaluate


class TestEvaluate:
    def test_summary_and_reports(self, capsys, tmp_path):
        dyn = str(tmp_path / "dyn.json")
        per = str(tmp_path / "per.json")
        code, out, _ = run_cli(capsys, "evaluate", "--synthetic", "2",
                               "--seed", "5", "--warmstart", "64",
                               "--out", dyn, "--out-persistence", per)
        assert code == 0
        summary = json.loads(out)
        assert summary["n_patients"] == 2
        assert summary["n_epochs"] > 0
        assert 0.0 <= summary["dynamic_auc"] <= 1.0
        assert 0.0 <= summary["persistence_auc"] <= 1.0
        for path in (dyn, per):
            report = parse_report(path)
            assert isinstance(report, RocReport)
            assert report.mode == "micro"


# ---------------------------------------------------------------------------
# serve and entry point


class TestServeAndEntry:
    def test_serve_bad_config_exits_2(self, capsys, tmp_path):
        missing = str(tmp_path / "absent-config.json")
        code, _, err = run_cli(capsys, "serve", "--config", missing)
        assert code == 2
        assert json.loads(err)["error"] == "ConfigError"

    def test_module_entry_point(self, chart):
        proc = subprocess.run(
            [sys.executable, "-m", "hepdose.cli", "dose", chart,
             "--policy", "naive"],
            capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["plan"]["doses"]
