"""Acceptance criteria at their stated scales and tolerances.

Each test prints one ``PASS`` or ``FAIL`` line before asserting, so the
outcome of every criterion is visible in ``pytest -v`` output even when an
earlier one fails.
"""

import time

import numpy as np
import pytest

from qdecay import GridworldSpec, admissible_eta_bound, build_gridworld, exact_bellman, solve_q_star
from qdecay.bounds import constants_c, lemma_sum_scan
from qdecay.experiments import KINDS, ExperimentConfig, run_experiment
from qdecay.inference import prefix_sup_statistic, sup_norm_statistic

from conftest import small_config

pytestmark = pytest.mark.acceptance


def verdict(capsys, number, passed, detail, started):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}  ({time.perf_counter() - started:.1f} s)")
    return passed


def failed_checks(report):
    return [f"{c.name}={c.value}" for c in report.checks if not c.passed]


def grid_cfg(kind, seed, **kw):
    return ExperimentConfig(kind=kind, mdp={"gridworld": {"gamma": 0.1}}, seed=seed, **kw)


def test_01_oracle_correctness(capsys):
    t0 = time.perf_counter()
    residuals = {}
    for gamma in (0.1, 0.99):
        m = build_gridworld(GridworldSpec(gamma=gamma))
        q = solve_q_star(m)
        residuals[gamma] = float(np.abs(exact_bellman(m, q) - q).max())
    m = build_gridworld(GridworldSpec(gamma=0.1))
    rng = np.random.default_rng(2024)
    contraction = monotone = True
    for _ in range(100):
        q1, q2 = rng.normal(scale=5, size=(2, m.dim))
        gap = np.abs(q1 - q2).max()
        contraction &= np.abs(exact_bellman(m, q1) - exact_bellman(m, q2)).max() <= m.gamma * gap * (1 + 1e-12)
        lo = np.minimum(q1, q2)
        monotone &= bool(np.all(exact_bellman(m, lo) <= exact_bellman(m, q1) + 1e-12))
    ok = all(r <= 1e-12 for r in residuals.values()) and contraction and monotone
    verdict(capsys, 1, ok, f"residuals={residuals} contraction={contraction} monotone={monotone}", t0)
    assert ok


def test_02_lemma_grid(capsys):
    t0 = time.perf_counter()
    violations, cases = 0, 0
    for gamma in (0.1, 0.5, 0.9, 0.99):
        for p in (2.0, 3.0):
            eta = admissible_eta_bound(gamma, p) / 2
            c3 = constants_c(eta, gamma, p)[2]
            for nu in (1.0, 2.0, 3.0):
                for n in (100, 1000):
                    rows = lemma_sum_scan(c3, eta, nu, p, n)
                    violations += sum(not r["holds"] for r in rows)
                    cases += len(rows)
    ok = violations == 0 and time.perf_counter() - t0 < 30
    verdict(capsys, 2, ok, f"violations={violations} over {cases} (gamma, nu, p, n, t) points", t0)
    assert ok


def test_03_mse_envelope(capsys):
    t0 = time.perf_counter()
    cfg = grid_cfg("bounds_check", 20240608, schedules=["pd2z:0.05,1"], n=5000, B=200,
                   options={"lemma_gammas": [0.1], "lemma_ns": [100], "stride": 1})
    rep = run_experiment(cfg)
    chk = rep.check("empirical rms error within bound")
    verdict(capsys, 3, chk.passed, f"exceedances={chk.value} theta={rep.scalars['theta_2_root']:.4g} "
            f"init_gap={rep.scalars['init_gap']:.4g}", t0)
    assert chk.passed


def test_04_rate(capsys):
    t0 = time.perf_counter()
    cfg = grid_cfg("final_error_vs_n", 20240602, schedules=["const:0.05", "pd2z:0.05,1"],
                   n_grid=[500, 1000, 2000, 4000, 8000], B=500)
    rep = run_experiment(cfg)
    slopes = {r["schedule"]: round(r["slope"], 4) for r in rep.tables["slopes"].where()}
    bad = failed_checks(rep)
    verdict(capsys, 4, not bad, f"slopes={slopes} failed={bad}", t0)
    assert not bad


def test_05_schedule_ordering(capsys):
    t0 = time.perf_counter()
    cfg = grid_cfg("compare_schedules", 20240601,
                   schedules=["const:0.05", "poly:0.05,0.65", "pd2z:0.05,1", "pd2z:0.05,2", "pd2z:0.05,3"],
                   n=5000, B=500, options={"stride": 50})
    rep = run_experiment(cfg)
    finals = {r["schedule"]: round(r["mean_final"], 5) for r in rep.tables["final_error"].where()}
    bad = failed_checks(rep)
    verdict(capsys, 5, not bad, f"final={finals} failed={bad}", t0)
    assert not bad


def test_06_tail_vs_full_pr(capsys):
    t0 = time.perf_counter()
    cfg = grid_cfg("pr_vs_tailpr", 20240604, schedules=["pd2z:0.05,1"],
                   n_grid=[1000, 2000, 3000, 4000, 5000], B=500)
    rep = run_experiment(cfg)
    ratios = [round(c.value, 3) for c in rep.checks]
    bad = failed_checks(rep)
    verdict(capsys, 6, not bad, f"tail/full={ratios}", t0)
    assert not bad


def test_07_clt(capsys):
    t0 = time.perf_counter()
    cfg = grid_cfg("clt_qq", 20240607, schedules=["pd2z:0.05,1"], n_grid=[5000, 10000], B=1000,
                   options={"directions": 6})
    rep = run_experiment(cfg)
    corr = min(c.value for c in rep.checks if "normal QQ" in c.name)
    ratios = [round(c.value, 3) for c in rep.checks if "sd ratio" in c.name]
    bad = failed_checks(rep)
    verdict(capsys, 7, not bad, f"min normal-QQ corr={corr:.4f} sd ratios={ratios}", t0)
    assert not bad


def test_08_strong_invariance(capsys):
    t0 = time.perf_counter()
    cfg = grid_cfg("qq_invariance", 20240603, schedules=["pd2z:0.05,1", "poly:0.05,0.65"], n=5000, B=500)
    rep = run_experiment(cfg)
    summary = {(r["schedule"]): (round(r["qq_correlation"], 4), round(r["ks"], 3))
               for r in rep.tables["summary"].where()}
    bad = failed_checks(rep)
    verdict(capsys, 8, not bad, f"(corr, KS)={summary}", t0)
    assert not bad


def test_09_bootstrap_coverage(capsys):
    t0 = time.perf_counter()
    cfg = grid_cfg("bootstrap_coverage", 20240609, schedules=["pd2z:0.05,1"], n=5000, B=500,
                   options={"B_boot": 500, "levels": [0.95], "plugin": False})
    rep = run_experiment(cfg)
    chk = rep.check("oracle 0.95 coverage")
    verdict(capsys, 9, chk.passed, f"coverage={chk.value:.3f} target {chk.target}", t0)
    assert chk.passed


def test_10_horizon_misspecification(capsys):
    t0 = time.perf_counter()
    pr = run_experiment(grid_cfg("pr_vs_tailpr", 20240610, schedules=["pd2z:0.05,1"], n_grid=[5000], B=500,
                                 options={"misspec": 0.5}))
    clt = run_experiment(grid_cfg("clt_qq", 20240610, schedules=["pd2z:0.05,1"], n_grid=[5000], B=1000,
                                  options={"directions": 6, "misspec": 0.5}))
    steps = pr.tables["pr_compare"].where(n=5000)[0]["steps"]
    corr = min(c.value for c in clt.checks if "normal QQ" in c.name)
    bad = failed_checks(pr) + failed_checks(clt)
    ok = not bad and steps == 5000 - 35
    verdict(capsys, 10, ok, f"steps={steps} tail/full={pr.checks[0].value:.3f} min normal-QQ corr={corr:.4f}", t0)
    assert ok


def test_11_determinism(capsys):
    t0 = time.perf_counter()
    differing = []
    for kind in KINDS:
        one = run_experiment(small_config(kind), threads=1).to_json().encode()
        eight = run_experiment(small_config(kind), threads=8).to_json().encode()
        again = run_experiment(small_config(kind), threads=1).to_json().encode()
        if not (one == eight == again):
            differing.append(kind)
    ok = not differing
    verdict(capsys, 11, ok, f"{len(KINDS)} kinds, threads 1 and 8, differing={differing}", t0)
    assert ok


def brute_suffix(x):
    T, D = x.shape
    best = 0.0
    for t in range(T):
        for d in range(D):
            s = 0.0
            for l in range(T - 1, t - 1, -1):
                s += x[l, d]
            best = max(best, abs(s))
    return best


def brute_prefix(x):
    T, D = x.shape
    best = 0.0
    for t in range(T):
        for d in range(D):
            s = 0.0
            for l in range(t + 1):
                s += x[l, d]
            best = max(best, abs(s))
    return best


def test_12_statistic_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    mismatches = 0
    for _ in range(200):
        x = rng.normal(size=(int(rng.integers(1, 51)), int(rng.integers(1, 5))))
        mismatches += sup_norm_statistic(x) != brute_suffix(x)
        mismatches += prefix_sup_statistic(x) != brute_prefix(x)
    ok = mismatches == 0
    verdict(capsys, 12, ok, f"mismatches={mismatches} over 200 instances", t0)
    assert ok
