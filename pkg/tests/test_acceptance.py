"""Acceptance suite: every criterion at full trial counts and stated tolerances.

Each test re-derives its verdict from the experiment rows rather than trusting
the summary flag, then records one PASS/FAIL line. The lines are printed at the
end of the session (see ``conftest.py``). Deselect with ``-m "not acceptance"``.
"""

import functools
import math

import numpy as np
import pytest

from cqlearn import nets
from cqlearn.algorithms import AlgorithmConfig
from cqlearn.algorithms.config import erm_schedule, threshold_sizing_ok
from cqlearn.experiments import ExperimentConfig, run_experiment

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

REPORT = []

# Independent 30-digit evaluation of the fat-shattering covering bound (d=10, L=1, eps=0.5, fat=2).
FATSHATTER_LOG10 = 30.1211120530663465


@functools.lru_cache(maxsize=None)
def run(name, **kw):
    return run_experiment(ExperimentConfig(experiment=name, seed=0, **kw))


def record(number, text, checks):
    """Log one line for criterion ``number`` and fail on the first false check."""
    failed = [label for label, ok in checks if not ok]
    line = f"{'PASS' if not failed else 'FAIL'} criterion {number}: {text}"
    if failed:
        line += " [failed: " + ", ".join(failed) + "]"
    REPORT.append(line)
    print(line)
    assert not failed, line


def rate(flags):
    flags = list(flags)
    return sum(map(bool, flags)) / len(flags)


def test_criterion_01_pb_engine():
    r = run("pb_engine")
    eb = max(x["err_binom"] for x in r.rows)
    ee = max(x["err_enum"] for x in r.rows)
    record(1, f"PB pmf binom err {eb:.1e}, enum err {ee:.1e}, {r.elapsed:.1f} s", [
        ("binomial <= 1e-12", eb <= 1e-12),
        ("enumeration <= 1e-12", ee <= 1e-12),
        ("binomial n <= 200", max(x["n_binom"] for x in r.rows) <= 200),
        ("enumeration n <= 16", max(x["n_enum"] for x in r.rows) <= 16),
        ("runtime < 5 s", r.elapsed < 5),
    ])


def test_criterion_02_gentle_event_faithfulness():
    r = run("gentle_event_faithfulness")
    ea = max(x["err_accept"] for x in r.rows)
    ef = max(x["err_fidelity"] for x in r.rows if x["err_fidelity"] is not None)
    record(2, f"{len(r.rows)} dense instances, accept err {ea:.1e}, fidelity err {ef:.1e}, "
              f"max Bures ratio {r.summary['max_bures_ratio']:.3g}, {r.elapsed:.1f} s", [
        ("500 instances", len(r.rows) == 500),
        ("n <= 6", max(x["n"] for x in r.rows) <= 6),
        ("accept <= 1e-10", ea <= 1e-10),
        ("fidelity <= 1e-8", ef <= 1e-8),
        ("runtime < 2 min", r.elapsed < 120),
    ])


def test_criterion_03_gentle_tail_bound():
    r = run("gentle_tail_bound")
    dense = [x for x in r.rows if x["kind"] == "dense"]
    classical = [x for x in r.rows if x["kind"] == "classical"]
    faith = run("gentle_event_faithfulness").rows
    same = all(a["n"] == b["n"] and a["theta"] == b["theta"] and a["value"] == b["e_b"]
               for a, b in zip(dense, faith))
    v = sum(x["violation"] for x in r.rows)
    record(3, f"{len(dense)} dense + {len(classical)} classical instances, {v} violations", [
        ("dense instances are those of criterion 2", same and len(dense) == len(faith)),
        ("10^4 classical", len(classical) == 10_000),
        ("classical n <= 2000", max(x["n"] for x in classical) <= 2000),
        ("zero violations", all(x["value"] <= x["bound"] * (1 + 1e-12) for x in r.rows)),
    ])


def test_criterion_04_pb_gentleness():
    r = run("pb_gentleness")
    hyp = all(1 / x["lam"] >= max(1.0, x["stddev"]) and x["p_b"] < 0.25 for x in r.rows)
    viol = sum(x["chi2"] > 10.0 * x["bound_rhs"] * (1 + 1e-12) for x in r.rows)
    mr = max(x["ratio"] for x in r.rows)
    record(4, f"{len(r.rows)} instances, {viol} violations, empirical max ratio chi2/(Pr[B] sd lam)^2 = {mr:.3f}", [
        ("10^4 instances", len(r.rows) == 10_000),
        ("hypotheses hold", hyp),
        ("zero violations", viol == 0),
    ])


def test_criterion_05_threshold_search():
    r = run("threshold_search_success")
    checks, parts = [], []
    for m in (4, 8, 16):
        rows = [x for x in r.rows if x["m"] == m]
        s, fp = rate(x["success"] for x in rows), rate(x["false_positive"] for x in rows)
        n = rows[0]["n"]
        parts.append(f"m={m}: success {s:.4f}, false positive {fp:.4f}")
        checks += [(f"m={m} 2000 trials", len(rows) == 2000),
                   (f"m={m} sizing", threshold_sizing_ok(m, n, 0.1, 1 / 400, 4.0)),
                   (f"m={m} success >= 0.03", s >= 0.03),
                   (f"m={m} false positive <= 0.05", fp <= 0.05)]
    checks.append(("runtime < 10 min", r.elapsed < 600))
    record(5, "; ".join(parts) + f"; {r.elapsed:.1f} s", checks)

    b = run("threshold_search_success", design="boundary")
    info = ", ".join(f"m={m} {b.summary[f'm{m}']['false_positive_rate']:.4f}" for m in (4, 8, 16))
    line = f"INFO criterion 5: boundary design false-positive rates {info}"
    REPORT.append(line)
    print(line)


def test_criterion_06_erm():
    r = run("erm_projector")
    ok = [abs(x["mu_hat"] - x["mu_max"]) <= 0.6 + 1e-12 and abs(x["mu_hat"] - x["mu_c_star"]) <= 0.6 + 1e-12
          for x in r.rows]
    s = rate(ok)
    record(6, f"{len(r.rows)} runs, success {s:.3f} (target 0.75), {r.elapsed:.1f} s", [
        ("200 runs", len(r.rows) == 200),
        ("success >= 1 - delta", s >= 0.75),
        ("runtime < 30 min", r.elapsed < 1800),
    ])


def test_criterion_07_risk_estimation_update():
    r = run("risk_estimation_update")
    s = rate(x["max_error"] <= 0.15 for x in r.rows)
    diff = max(x["oracle_max_diff"] for x in r.rows)
    record(7, f"{len(r.rows)} runs, success {s:.3f}, oracle diff {diff:.1e}", [
        ("200 runs", len(r.rows) == 200),
        ("success >= 0.75", s >= 0.75),
        ("oracle <= 1e-9", diff <= 1e-9),
    ])


def test_criterion_08_hypothesis_selection():
    r = run("hypothesis_selection")
    exact = [x for x in r.rows if x["route"] == "exact"]
    est = [x for x in r.rows if x["route"] == "estimated"]
    ev = sum(x["selected_distance"] > 3 * x["eta"] + 1e-12 for x in exact)
    s = rate(x["selected_distance"] <= x["bound"] + 1e-12 for x in est)
    record(8, f"exact: {len(exact)} instances, {ev} violations; estimated: success {s:.3f} over {len(est)} runs", [
        ("100 exact instances", len(exact) == 100),
        ("exact within 3 eta", ev == 0),
        ("estimated success >= 1 - delta", s >= 0.75),
    ])


def test_criterion_09_matrix_lemmas():
    r = run("matrix_lemmas")
    s = r.summary
    keys = ("fvdg", "brand", "exp", "bhatia", "weyl")
    record(9, f"Helstrom err {s['max_helstrom_err']:.1e}; "
              + ", ".join(f"{k} {s[f'{k}_violations']}" for k in keys), [
        ("1000 instances", s["instances"] == 1000),
        ("Helstrom <= 1e-9", max(x["helstrom_err"] for x in r.rows) <= 1e-9),
        *((f"{k} zero violations", s[f"{k}_violations"] == 0) for k in keys),
    ])


def test_criterion_10_without_replacement():
    r = run("without_replacement")
    grid = {(x["l"], x["K"], x["m"], x["eps"]) for x in r.rows}
    full = {(l, K, m, e) for l in (200, 1000) for K in (2, 8) for m in (4, 32) for e in (0.1, 0.2)}
    fails = [x for x in r.rows if x["freq"] > x["bound"] + 3 * x["se"]]
    record(10, f"{len(r.rows)} settings x {r.config['trials'] or 10_000} trials, {len(fails)} exceedances", [
        ("full grid", grid == full),
        ("within bound + 3 se", not fails),
    ])


def test_criterion_11_covering_bounds():
    r = run("covering_bounds")
    lqc = nets.bound_lqc(4, 2, 0.5).log10_value
    fu = nets.bound_full_unitary(1, 6).value
    fat = nets.bound_fatshatter(10, 1, 0.5, 2).log10_value
    audits = all(x["audit"] and x["covered"] for x in r.rows)
    record(11, f"lqc log10 {lqc:.4f}, full unitary {fu:g}, fat-shatter log10 {fat:.6f}, {len(r.rows)} nets audited", [
        ("lqc 89.54 +- 0.01", abs(lqc - 89.54) <= 0.01),
        ("full unitary = 1", fu == 1),
        ("fat-shatter spot value", fat == pytest.approx(FATSHATTER_LOG10, rel=1e-12)),
        ("class sizes <= 200", max(x["class_size"] for x in r.rows) <= 200),
        ("nets cover", audits),
    ])


def test_criterion_12_pure_state_learner():
    r = run("pure_state_learner")
    Ts = sorted({x["T"] for x in r.rows})
    rates = {T: rate(x["error"] for x in r.rows if x["T"] == T) for T in Ts}
    runs400 = sum(x["T"] == 400 for x in r.rows)
    line = ", ".join(f"T={T} {rates[T]:.3f}" for T in Ts)
    record(12, f"error rates {line}; Omega fit {r.summary['omega_fit']:.3f} (reported)", [
        ("500 runs at T=400", runs400 == 500),
        ("decays with T", r.summary["decays"] and rates[Ts[-1]] <= rates[Ts[0]]),
        ("<= 0.05 at T=400", rates[400] <= 0.05),
    ])


def test_criterion_13_end_to_end_erm():
    r = run("end_to_end_erm")
    s = rate(x["gap"] <= 7 * 0.15 + 1e-12 for x in r.rows)
    record(13, f"{len(r.rows)} runs, success {s:.3f}, median gap {r.summary['median_gap']:.3f}", [
        ("100 runs", len(r.rows) == 100),
        ("success >= 1 - delta", s >= 0.75),
    ])


def test_sample_size_slope_report():
    """Reported only: log-log slope of the required population against 1/eps."""
    e1, e2 = 0.1, 0.05
    n1 = erm_schedule(8, AlgorithmConfig(eps=e1)).n_required
    n2 = erm_schedule(8, AlgorithmConfig(eps=e2)).n_required
    slope = math.log(n2 / n1) / math.log(e1 / e2)
    line = f"INFO sample size: ERM n_required {n1} at eps={e1}, {n2} at eps={e2}, log-log slope {slope:.2f}"
    REPORT.append(line)
    print(line)
    assert np.isfinite(slope) and n2 > n1
