import csv
import io
import json

import pytest

from tailbon.cli import main
from tailbon.experiments import (EXPERIMENTS, REFERENCE_SCHEDULE, ExperimentReport, ExperimentSpec, Panel,
                                 amplification_exponent, fmt, gap_bound, predicted_gap, run_experiment)
from tailbon.plots import emit_plot_data

SMALL = {
    "error_decay": {"ms": [100, 400], "trials": 6, "truth_trials": 2000, "N": 1000, "slope_band": [-5, 5]},
    "slg_gap": {"trials": 12, "N": 1024, "K": 64},
    "amplification": {"trials": 12, "bon_trials": 500},
    "regret": {"ms": [16, 64], "trials": 6, "N": 1024},
    "allocation_demo": {"instances": 10, "n_pilot": 400, "n_total": 100},
    "diagnose": {"n": 600},
    "schedule_table": {},
}


def test_every_experiment_is_registered():
    assert set(EXPERIMENTS) == set(SMALL)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_experiment_runs_and_summary_has_claim(name, tmp_path):
    report = run_experiment(ExperimentSpec(name, seed=3, params=SMALL[name], out=str(tmp_path)))
    summary = json.loads((tmp_path / f"{name}.json").read_text())
    assert summary["claim"] and "pass" in summary and summary["seed"] == 3
    rows = list(csv.DictReader(io.StringIO((tmp_path / f"{name}.csv").read_text())))
    assert len(rows) == len(report.table.rows) > 0


@pytest.mark.parametrize("name", ["error_decay", "slg_gap", "amplification", "regret", "allocation_demo"])
def test_bytes_identical_across_runs_and_worker_counts(name, tmp_path):
    outs = []
    for i, jobs in enumerate([1, 1, 3]):
        out = tmp_path / str(i)
        run_experiment(ExperimentSpec(name, seed=5, params=SMALL[name], out=str(out), jobs=jobs))
        outs.append(((out / f"{name}.csv").read_bytes(), (out / f"{name}.json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_different_seed_changes_output():
    a = run_experiment(ExperimentSpec("slg_gap", seed=1, params=SMALL["slg_gap"]))
    b = run_experiment(ExperimentSpec("slg_gap", seed=2, params=SMALL["slg_gap"]))
    assert a.table.csv_text() != b.table.csv_text()


def test_unknown_experiment_and_parameter():
    with pytest.raises(ValueError):
        run_experiment(ExperimentSpec("nope"))
    with pytest.raises(ValueError):
        run_experiment(ExperimentSpec("slg_gap", params={"typo": 1}))


def test_failure_marker_written(tmp_path):
    with pytest.raises(ValueError):
        run_experiment(ExperimentSpec("slg_gap", params={"dist": {"variant": "pure_gaussian"}}, out=str(tmp_path)))
    marker = json.loads((tmp_path / "slg_gap.json").read_text())
    assert marker["status"] == "failed" and marker["pass"] is False


def test_schedule_table_reproduces_reference():
    report = run_experiment(ExperimentSpec("schedule_table"))
    assert report.passed
    assert [(r["N"], r["m"], r["K"]) for r in report.table.rows] == REFERENCE_SCHEDULE


def test_theory_helpers():
    assert gap_bound(1.0, 1.0, 4096) == pytest.approx(0.5098, abs=1e-4)
    assert amplification_exponent(1.0) == pytest.approx(0.125)
    assert predicted_gap(1.0, 1.0, 4096, 8, 256) == pytest.approx(0.979, abs=1e-3)


def test_fmt_is_nine_significant_digits():
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(7) == "7" and fmt(None) == "" and fmt(True) == "true"
    assert fmt(1234567890.123) == "1.23456789e+09"


def test_plot_data_panels(tmp_path):
    report = run_experiment(ExperimentSpec("slg_gap", params=SMALL["slg_gap"]))
    paths = emit_plot_data(report, tmp_path)
    assert (tmp_path / "slg_gap.csv").read_text().splitlines()[0] == "N,algo,mean_best,se"
    assert paths == [tmp_path / "slg_gap.csv"]

    diag = run_experiment(ExperimentSpec("diagnose", params=SMALL["diagnose"]))
    emit_plot_data(diag, tmp_path)
    for panel in ("qq_global", "qq_tail"):
        lines = (tmp_path / f"{panel}.csv").read_text().splitlines()
        assert lines[0] == "theoretical_q,empirical_q" and len(lines) > 1


def test_empty_report_gives_header_only(tmp_path):
    empty = ExperimentReport("empty", Panel("empty", ["N", "algo", "mean_best", "se"]), {})
    (path,) = emit_plot_data(empty, tmp_path)
    assert path.read_text() == "N,algo,mean_best,se\n"


def test_svg_rendering_is_reproducible(tmp_path):
    report = run_experiment(ExperimentSpec("error_decay", params=SMALL["error_decay"]))
    a = [p.read_bytes() for p in emit_plot_data(report, tmp_path / "a", svg=True)]
    b = [p.read_bytes() for p in emit_plot_data(report, tmp_path / "b", svg=True)]
    assert a == b and any(x.startswith(b"<?xml") for x in a)


def test_cli_experiment_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL["slg_gap"]))
    assert main(["experiment", "schedule_table", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "plots" / "schedule.csv").exists()
    failing = tmp_path / "fail.json"
    failing.write_text(json.dumps({**SMALL["error_decay"], "slope_band": [5, 6]}))
    assert main(["experiment", "error_decay", "--config", str(failing)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["experiment", "slg_gap", "--config", str(bad)]) == 1
    assert main(["experiment", "slg_gap", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_seed_from_config_and_flag(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL["slg_gap"], "seed": 9}))
    main(["experiment", "slg_gap", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["experiment", "slg_gap", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "slg_gap.csv").read_bytes() == (tmp_path / "b" / "slg_gap.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "slg_gap.json").read_text())["seed"] == 9


def test_cli_fit_predict_allocate_search(tmp_path, capsys):
    rewards = tmp_path / "r.csv"
    rewards.write_text("reward\n" + "\n".join(str(i / 10) for i in range(200)) + "\n")
    assert main(["fit", "--rewards", str(rewards), "--out", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert fit["m_total"] == 200
    capsys.readouterr()
    assert main(["predict", "--fit", str(tmp_path / "fit.json"), "-n", "1", "10"]) == 0
    points = json.loads(capsys.readouterr().out)["points"]
    assert points[0] == {"N": 1, "value": fit["mu_hat"]}

    problem = tmp_path / "alloc.json"
    problem.write_text(json.dumps({"prompts": [{"fit": fit, "weight": 1}, {"fit": fit}], "n_total": 10}))
    assert main(["allocate", "--config", str(problem)]) == 0
    assert json.loads(capsys.readouterr().out)["counts"] == [5, 5]

    assert main(["slg", "-N", "300", "--seed", "4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["budget_used"] == 300 and out["algo"] == "slg_tail"
    assert main(["bon", "-N", "50"]) == 0
    assert json.loads(capsys.readouterr().out)["budget_used"] == 50
    assert main(["fit"]) == 1


def test_cli_diagnose_reads_rewards_file(tmp_path, capsys):
    rewards = tmp_path / "r.json"
    rewards.write_text(json.dumps([((i * 7919) % 1000) / 100 for i in range(1000)]))
    code = main(["diagnose", "--rewards", str(rewards), "--out", str(tmp_path / "d")])
    summary = json.loads(capsys.readouterr().out)
    assert summary["n"] == 1000
    assert code == (0 if summary["pass"] else 2)
    assert (tmp_path / "d" / "plots" / "qq_tail.csv").exists()
