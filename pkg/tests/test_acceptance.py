"""End-to-end acceptance checks, one test (or group) per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line; the conftest hook
repeats the lines in the terminal summary.
"""
import math
import re
import time
from pathlib import Path

import numpy as np

import bilevel_soc
from bilevel_soc import calmness, reform, soc, stationarity
from bilevel_soc.calmness import CalmStatus
from bilevel_soc.expr import gradient, hessian, third_tensor
from bilevel_soc.lower import solve_lower
from bilevel_soc.stationarity import StatStatus

from helpers import random_expr, random_slack_instance, richardson

MU_SET = (0.0, 4.0, 40.0, 100.0)


def _line(num, ok, detail=""):
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


# 1 --------------------------------------------------------------------------------

def test_c01_value_function_oracle(ex31, ex46, ex48):
    t0 = time.perf_counter()
    errs = []
    for x in np.linspace(-1, 1, 101):
        v = -0.25 * x * x if x > 0 else 0.0
        errs.append(abs(solve_lower(ex31, [x]).value - v))
    ax = np.linspace(-1, 1, 21)
    for a in ax:
        for b in ax:
            s = a + b
            errs.append(abs(solve_lower(ex46, [a, b]).value - (-0.25 * s * s if s > 0 else 0.0)))
    for x in np.linspace(-1, 1, 101):
        errs.append(abs(solve_lower(ex48, [x]).value - (-0.5 * x * x if x > 0 else 0.0)))
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-6 and elapsed <= 30.0
    assert _line(1, ok, f"max |V - closed form| = {max(errs):.2e}, {elapsed:.1f} s"), (max(errs), elapsed)


# 2 --------------------------------------------------------------------------------

def test_c02_solution_map(ex31):
    sol = solve_lower(ex31, [0.64])
    ys = sorted(float(y[0]) for y in sol.minimizers)
    ok = len(ys) == 2 and abs(ys[0] + 0.8) <= 1e-8 and abs(ys[1] - 0.8) <= 1e-8
    for x in (-1.0, -0.5, -1e-3, 0.0):
        mins = solve_lower(ex31, [x]).minimizers
        ok = ok and len(mins) == 1 and float(mins[0][0]) == 0.0
    assert _line(2, ok, f"S(0.64) = {ys}")


# 3 and 4 ------------------------------------------------------------------------------

def _cp_violation(prob, example_id, mu):
    gcp = reform.build(prob, "CP")
    cand = reform.default_candidate(gcp)
    verdict = calmness.test_partial_calmness(gcp, cand, [mu])
    problems = []
    if verdict.status is not CalmStatus.VIOLATED:
        problems.append(f"mu={mu}: {verdict.status.value}")
    for w in verdict.witnesses:
        rep = calmness.replay_witness(gcp, cand, w)
        if not rep["ok"] or rep["drop"] < 1e-10:
            problems.append(f"mu={mu}: replay failed {rep}")
        z = w.point
        k = 1.0 / z[0]
        if example_id == "3.1":
            closed = 1.0 / k - (1 + mu / 4) / k ** 2
            on_path = z[1] == 0.0
        else:
            closed = 2.0 / k - mu / k ** 2
            on_path = abs(z[0] - z[1]) <= 1e-12 and z[2] == 0.0
        if not on_path or abs(w.drop - closed) > 1e-10:
            problems.append(f"mu={mu}: witness {z.tolist()} drop {w.drop} vs {closed}")
    ana = calmness.analytic_witness_check(example_id, mu)
    if not (ana["matches"] and ana["strict"] and ana["feasible"]):
        problems.append(f"analytic sequence: {ana}")
    if example_id == "3.1" and abs(ana["drop"] - (1 / ana["k"] - (1 + mu / 4) / ana["k"] ** 2)) > 1e-10:
        problems.append(f"analytic drop mismatch: {ana}")
    return problems


def test_c03_partial_calmness_violation_simple_example(ex31):
    problems = [p for mu in MU_SET for p in _cp_violation(ex31, "3.1", mu)]
    assert _line(3, not problems, "; ".join(problems) or "VIOLATED for all penalties"), problems


def test_c04_partial_calmness_violation_two_leader_example(ex46):
    problems = [p for mu in MU_SET for p in _cp_violation(ex46, "4.6", mu)]
    assert _line(4, not problems, "; ".join(problems) or "VIOLATED for all penalties"), problems


# 5 and 11 ----------------------------------------------------------------------------

def test_c05_sigma_sets(sigma_grid_46, sigma_grid_48):
    m1 = sum(r["SSOC"] != r["gph"] for r in sigma_grid_46)
    m2 = sum(r["WSOC"] != r["KKT"] for r in sigma_grid_46)
    m3 = sum(r["WSOC"] != r["gph"] for r in sigma_grid_48)
    ok = m1 == m2 == m3 == 0
    assert _line(5, ok, f"mismatches SSOC/gph {m1}, WSOC/KKT {m2}, 4.8 WSOC/gph {m3} "
                        f"over {len(sigma_grid_46)} + {len(sigma_grid_48)} points"), (m1, m2, m3)


def test_c11_inclusion_chain(sigma_grid_46, sigma_grid_48):
    bad = 0
    for r in list(sigma_grid_46) + list(sigma_grid_48):
        if (r["gph"] and not r["SSOC"]) or (r["SSOC"] and not r["KKT"]):
            bad += 1
    assert _line(11, bad == 0, f"{bad} points break gph S <= Sigma_SSOC <= Sigma_KKT"), bad


# 6 ---------------------------------------------------------------------------------

def test_c06_table1():
    t0 = time.perf_counter()
    res = calmness.table1()
    elapsed = time.perf_counter() - t0
    expected = {"4.6": ["No", "Yes", "Yes", "Yes", "No"], "4.8": ["No", "Yes", "Yes", "Yes", "Yes"]}
    ok = res["rows"] == expected and elapsed <= 300
    assert _line(6, ok, f"{res['rows']} in {elapsed:.0f} s"), res["rows"]


# 7 ---------------------------------------------------------------------------------

def test_c07_value_function_stationarity(ex46):
    cp = reform.build(ex46, "CP")
    m = stationarity.check_m_stationary(cp, np.zeros(cp.dim))
    rb = reform.build(ex46, "R_BSOCP")
    z = reform.point_from_blocks(rb, {"x": [0, 0], "y": [0], "u": [0, 0], "d": [1]})
    s = stationarity.check_s_stationary(rb, z)
    ok = m.status is StatStatus.REFUTED_OVER_ESTIMATE and s.status is StatStatus.HOLDS
    if ok:
        lam = s.multipliers
        so = rb.H_labels.index("-d'H(L)d")
        others = np.concatenate([np.delete(lam["lambda_H"], so), lam["lambda_g"], lam["lambda_u"], [lam["mu"]]])
        ok = (s.residual <= 1e-8 and abs(lam["lambda_H"][so] - 1.0) <= 1e-10
              and np.max(np.abs(others)) <= 1e-10
              and stationarity.verify_certificate(rb, z, s) <= 1e-8)
    assert _line(7, ok, f"CP: {m.status.value}; R-BSOCP: {s.status.value}, residual {s.residual}")


# 8 ---------------------------------------------------------------------------------

def test_c08_semidefinite_program_stationarity(ex31):
    c = stationarity.check_cpsoc_stationarity(ex31, [0.0], [0.0])
    ok = c.status is StatStatus.HOLDS
    if ok:
        Om = np.asarray(c.multipliers["Omega"])
        H = ex31.local([0.0], [0.0]).hess_f
        ok = (np.linalg.eigvalsh(Om).min() >= -1e-12 and abs(float(np.sum(H * Om))) <= 1e-12
              and c.residual <= 1e-8 and c.multipliers["mu"] >= 0)
    assert _line(8, ok, f"{c.status.value}, Omega = {c.multipliers.get('Omega')}, residual {c.residual}")


# 9 ---------------------------------------------------------------------------------

def test_c09_squared_slack_round_trip():
    rng = np.random.default_rng(2024)
    failures = []
    for i in range(200):
        prob, x, y, u = random_slack_instance(rng)
        try:
            y1, z, u1 = soc.slack_lift(prob, x, y, u)
            if not soc.check_slack_soc(prob, x, y1, z, u1):
                failures.append((i, "slack SOC rejected"))
                continue
            _, up, verdict = soc.slack_project(prob, x, y1, z, u1)
            if np.any(up < -1e-10) or not verdict:
                failures.append((i, f"projection: u={up}, wsoc={verdict.holds.value}"))
        except ValueError as exc:
            failures.append((i, str(exc)))
    assert _line(9, not failures, f"{len(failures)} failures over 200 instances"), failures[:5]


# 10 --------------------------------------------------------------------------------

def test_c10_symbolic_derivatives():
    rng = np.random.default_rng(7)
    names = ["a", "b", "c"]
    failures, done = [], 0
    while done < 100:
        e = random_expr(rng, names, depth=4)
        pt = dict(zip(names, rng.uniform(-1.5, 1.5, 3)))
        try:
            if e.domain_margin(pt) < 0.2 or not math.isfinite(e.evaluate(pt)):
                continue
        except ArithmeticError:
            continue
        done += 1
        grad, hess, third = gradient(e, names), hessian(e, names), third_tensor(e, names)
        for i, v in enumerate(names):
            checks = [(grad[i], e)]
            checks += [(hess[i][j], grad[j]) for j in range(3)]
            checks += [(third[i][j][k], hess[j][k]) for j in range(3) for k in range(3)]
            for sym, lower_order in checks:
                exact = sym.evaluate(pt)
                approx = richardson(lower_order, pt, v)
                if abs(exact - approx) > 1e-6 * max(1.0, abs(exact), abs(approx)):
                    failures.append((str(e), v, exact, approx))
    assert _line(10, not failures, f"{len(failures)} mismatches over 100 expressions"), failures[:3]


# 12 --------------------------------------------------------------------------------

def test_c12_one_sided_verdicts(ex31, ex46, ex48):
    src = Path(bilevel_soc.__file__).parent
    offending = [p.name for p in src.rglob("*.py")
                 if re.search(r"calmness\s+holds", p.read_text(), re.IGNORECASE)]
    statuses = {s.value for s in CalmStatus}
    bad_replays = 0
    checked = 0
    for prob in (ex31, ex46, ex48):
        gcp = reform.build(prob, "CP")
        cand = reform.default_candidate(gcp)
        for v in (calmness.test_partial_calmness(gcp, cand),
                  calmness.test_clarke_calmness(gcp, cand, budget=3000)):
            if v.status is CalmStatus.VIOLATED:
                for w in v.witnesses:
                    checked += 1
                    bad_replays += not calmness.replay_witness(gcp, cand, w, v.kind)["ok"]
    ok = not offending and statuses == {"VIOLATED", "NOT_REFUTED"} and bad_replays == 0 and checked > 0
    assert _line(12, ok, f"{checked} witnesses replayed, {bad_replays} failed; offending files {offending}")
