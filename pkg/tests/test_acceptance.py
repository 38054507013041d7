"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test logs one ``CRITERION n: PASS|FAIL`` line; the lines are repeated in
the pytest terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import special

from tailbon.dists import PureGaussian, mc_value
from tailbon.experiments import REFERENCE_SCHEDULE, ExperimentSpec, run_experiment
from tailbon.gauss import expected_max, mills_ratio, std_normal_cdf, std_normal_quantile, trunc_var_factor
from tailbon.rng import stream
from tailbon.search import schedule
from tailbon.tail_fit import invert_tail_moments

# CSV bytes of criteria 4-7 at jobs=1, reused by the determinism criterion
_SERIAL_CSV: dict[str, bytes] = {}
_DETERMINISM_RUNS = {"error_decay": 0, "slg_gap": 11, "amplification": 11, "regret": 0}


def _verdict(log, n, checks: dict, elapsed: float, limit: float, detail: str):
    ok = all(checks.values()) and elapsed < limit
    failed = [k for k, v in checks.items() if not v] + ([f"runtime {elapsed:.1f}s >= {limit}s"] if elapsed >= limit else [])
    log(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f}s < {limit}s) {detail}"
        + (f" failed={failed}" if failed else ""))
    assert ok, failed


def _run(name, seed, tmp_path):
    out = tmp_path / f"{name}_serial"
    report = run_experiment(ExperimentSpec(name, seed=seed, out=str(out), jobs=1))
    _SERIAL_CSV[name] = (out / f"{name}.csv").read_bytes()
    return report


def test_criterion_01_math_kernel(criterion_log):
    t0 = time.perf_counter()
    e1, e2, e10 = expected_max(1), expected_max(2), expected_max(10)
    u = stream(1, "criterion1").random(2_000_000)
    mc = special.ndtri(u ** 0.1)
    mc_se = mc.std() / math.sqrt(mc.size)
    z = np.linspace(-6, 6, 120_001)
    round_trip = float(np.max(np.abs(std_normal_quantile(std_normal_cdf(z)) - z)))
    checks = {
        "E(1)=0": e1 == 0.0,
        "E(2)=1/sqrt(pi)": abs(e2 - 1 / math.sqrt(math.pi)) <= 1e-6,
        "E(10)": abs(e10 - 1.5387527) <= 1e-5,
        "E(10) vs MC": abs(mc.mean() - e10) <= 4 * mc_se,
        "lambda(0)": abs(mills_ratio(0.0) - math.sqrt(2 / math.pi)) <= 1e-9,
        "delta(0)": abs(trunc_var_factor(0.0) - (1 - 2 / math.pi)) <= 1e-9,
        "round trip": round_trip <= 1e-8,
    }
    elapsed = time.perf_counter() - t0
    _verdict(criterion_log, 1, checks, elapsed, 5.0,
             f"E(2)={e2:.10f} E(10)={e10:.8f} round_trip_max={round_trip:.2e}")


def test_criterion_02_inversion_identity(criterion_log):
    t0 = time.perf_counter()
    mu, sigma = 0.7, 1.9
    errs = []
    for z in np.linspace(-2.0, 5.0, 20):
        m_hat, s_hat = invert_tail_moments(mu + sigma * mills_ratio(z), sigma**2 * trunc_var_factor(z), z)
        errs.append(max(abs(m_hat - mu), abs(s_hat - sigma)))
    worst = max(errs)
    elapsed = time.perf_counter() - t0
    _verdict(criterion_log, 2, {"max error <= 1e-10": worst <= 1e-10}, elapsed, 1.0, f"max_err={worst:.2e}")


def test_criterion_03_schedule(criterion_log):
    t0 = time.perf_counter()
    got = [(n, schedule(n).m, schedule(n).K) for n, _, _ in REFERENCE_SCHEDULE]
    elapsed = time.perf_counter() - t0
    _verdict(criterion_log, 3, {"all seven rows": got == REFERENCE_SCHEDULE}, elapsed, 1.0, f"rows={got}")


def test_criterion_04_error_rate(criterion_log, tmp_path):
    t0 = time.perf_counter()
    report = _run("error_decay", _DETERMINISM_RUNS["error_decay"], tmp_path)
    s = report.summary
    elapsed = time.perf_counter() - t0
    _verdict(criterion_log, 4, {"slope in band": -0.65 <= s["slope"] <= -0.35}, elapsed, 120.0,
             f"slope={s['slope']:.3f} medians={[round(x, 4) for x in s['median_abs_err']]} "
             f"V_N={s['v_true']:.5f}+-{s['v_true_se']:.5f}")


def test_criterion_05_slg_gap(criterion_log, tmp_path):
    t0 = time.perf_counter()
    report = _run("slg_gap", _DETERMINISM_RUNS["slg_gap"], tmp_path)
    s = report.summary
    elapsed = time.perf_counter() - t0
    bound = math.sqrt(2) / 8 * math.sqrt(math.log(4096))
    checks = {
        "setting": (s["N"], s["m"], s["K"], s["trials"], s["t"]) == (4096, 8, 256, 2000, 1.0),
        "bound value": abs(s["bound"] - bound) < 1e-12,
        "gap >= bound at 3 sigma": s["gap"] - 3 * s["gap_se"] >= bound,
    }
    _verdict(criterion_log, 5, checks, elapsed, 60.0,
             f"gap={s['gap']:.4f}+-{s['gap_se']:.4f} bound={bound:.4f} predicted={s['predicted_gap']:.4f}")


def test_criterion_06_amplification(criterion_log, tmp_path):
    t0 = time.perf_counter()
    report = _run("amplification", _DETERMINISM_RUNS["amplification"], tmp_path)
    s = report.summary
    elapsed = time.perf_counter() - t0
    checks = {
        "gamma=1/8": abs(s["gamma"] - 0.125) < 1e-12,
        "N'=11585": s["N_amplified"] == round(4096 ** 1.125) == 11585,
        "SLG >= BoN(N') at 3 sigma": s["margin"] - 3 * s["margin_se"] >= 0,
    }
    _verdict(criterion_log, 6, checks, elapsed, 60.0,
             f"slg={s['mean_slg']:.4f} bon(11585)={s['bon_amplified']:.4f} margin={s['margin']:.4f}+-{s['margin_se']:.4f}")


def test_criterion_07_regret_trend(criterion_log, tmp_path):
    t0 = time.perf_counter()
    report = _run("regret", _DETERMINISM_RUNS["regret"], tmp_path)
    rows = report.summary["per_m"]
    elapsed = time.perf_counter() - t0
    monotone = all(b["regret"] <= a["regret"] + 2 * math.hypot(a["regret_se"], b["regret_se"])
                   for a, b in zip(rows, rows[1:]))
    checks = {"K = N // 2m": [r["K"] for r in rows] == [4096 // (2 * r["m"]) for r in rows],
              "non-increasing within 2 sigma": monotone}
    _verdict(criterion_log, 7, checks, elapsed, 120.0,
             "regret=" + ", ".join(f"m={r['m']}:{r['regret']:.3f}+-{r['regret_se']:.3f}" for r in rows))


def test_criterion_08_allocation(criterion_log):
    t0 = time.perf_counter()
    report = run_experiment(ExperimentSpec("allocation_demo", seed=0))
    s = report.summary
    elapsed = time.perf_counter() - t0
    checks = {"200 instances": len(report.table.rows) == 200, "max diff <= 1e-9": s["max_abs_diff"] <= 1e-9}
    _verdict(criterion_log, 8, checks, elapsed, 30.0, f"max_abs_diff={s['max_abs_diff']:.2e}")


def test_criterion_09_diagnostics(criterion_log):
    t0 = time.perf_counter()
    report = run_experiment(ExperimentSpec("diagnose", seed=7))
    s = report.summary
    elapsed = time.perf_counter() - t0
    _verdict(criterion_log, 9, {"n=5000": s["n"] == 5000, "tail_r2 > global_r2": s["tail_r2"] > s["global_r2"]},
             elapsed, 5.0, f"tail_r2={s['tail_r2']:.4f} global_r2={s['global_r2']:.4f}")


def test_criterion_10_determinism(criterion_log, tmp_path):
    t0 = time.perf_counter()
    same = {}
    for name, seed in _DETERMINISM_RUNS.items():
        if name not in _SERIAL_CSV:
            _run(name, seed, tmp_path)
        out = tmp_path / f"{name}_parallel"
        run_experiment(ExperimentSpec(name, seed=seed, out=str(out), jobs=8))
        same[name] = (out / f"{name}.csv").read_bytes() == _SERIAL_CSV[name]
    elapsed = time.perf_counter() - t0
    _verdict(criterion_log, 10, {f"{k} jobs 1 == jobs 8": v for k, v in same.items()}, elapsed, math.inf,
             f"identical={same}")


def test_criterion_11_not_reproducible_at_desk_scale(criterion_log):
    criterion_log("CRITERION 11: NOT RUN (hosted models and reward services required; "
                  "gateway contract tests against mock servers stand in)")
    pytest.skip("benchmark totals need hosted LLMs and reward models")
