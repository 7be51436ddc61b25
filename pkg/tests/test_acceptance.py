"""Acceptance criteria, one test each.

Every test records a one-line verdict through the ``criterion`` fixture; the
lines are printed together at the end of the pytest run.
"""

import math
import time

import numpy as np
import pytest

from cop_place.estimator import error_recursion_check, gauss_newton
from cop_place.experiments import ExperimentConfig, emit_report, run_cop_sweep, run_tve_experiment
from cop_place.gain import GainModel, constant_m, cop_metric, gain_pmu, gain_scada
from cop_place.measurements import (
    Placement,
    Sigmas,
    apply_mask,
    eval_f,
    eval_jacobian,
    flat_state,
    noise_std,
    random_true_state,
    sample_scada,
    selection_mask,
    synthesize_measurements,
)
from cop_place.placement import PlacementProblem, exhaustive_optimal, solve_placement_sdp
from cop_place.sdp import LmiBlock, LmiProgram, solve

SIGMAS = Sigmas.uniform(math.sqrt(1e-4))


def weighted_jacobian(v, placement, mats):
    grid = mats.grid
    return apply_mask(eval_jacobian(v, mats), selection_mask(placement, grid), noise_std(grid, SIGMAS))


def random_placement(grid, rng):
    inj, fl = sample_scada(grid, 0.15, rng)
    N = grid.n_buses
    pmu = np.zeros(N)
    pmu[rng.choice(N, size=rng.integers(0, N + 1), replace=False)] = 1
    return Placement.build(grid, pmu=pmu, injections=inj, flows=fl)


@pytest.fixture(scope="module")
def sweep14():
    start = time.perf_counter()
    result = run_cop_sweep(ExperimentConfig(case="ieee14", pmu_range=(1, 13), seed=0))
    return result, time.perf_counter() - start


def test_c01_jacobian_matches_finite_differences(mats2, mats14, criterion):
    rng = np.random.default_rng(101)
    h = 1e-6
    worst = 0.0
    start = time.perf_counter()
    for mats in (mats2, mats14):
        N = mats.grid.n_buses
        for _ in range(20):
            v = random_true_state(N, rng)
            J = eval_jacobian(v, mats)
            fd = np.empty_like(J)
            for j in range(2 * N):
                e = np.zeros(2 * N)
                e[j] = h
                fd[:, j] = (eval_f(v + e, mats) - eval_f(v - e, mats)) / (2 * h)
            worst = max(worst, np.linalg.norm(J - fd) / np.linalg.norm(J))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 5.0
    criterion(ok, f"max rel err {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_c02_gain_decomposition(ieee14, mats14, criterion):
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(20):
        p = random_placement(ieee14, rng)
        v = random_true_state(14, rng)
        F = weighted_jacobian(v, p, mats14)
        G = F.T @ F
        parts = gain_pmu(p.pmu, mats14, SIGMAS) + gain_scada(np.outer(v, v), p.injections, p.flows, mats14, SIGMAS)
        worst = max(worst, np.linalg.norm(G - parts) / np.linalg.norm(G))
    ok = worst < 1e-9
    criterion(ok, f"max rel err {worst:.2e}")
    assert ok


def test_c03_lipschitz_identity(ieee14, mats14, criterion):
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(20):
        p = random_placement(ieee14, rng)
        M = constant_m(p.injections, p.flows, mats14, SIGMAS)
        v, w = random_true_state(14, rng), random_true_state(14, rng)
        lhs = np.linalg.norm(weighted_jacobian(v, p, mats14) - weighted_jacobian(w, p, mats14)) ** 2
        rhs = (v - w) @ M @ (v - w)
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    ok = worst < 1e-9
    criterion(ok, f"max rel err {worst:.2e}")
    assert ok


def test_c04_error_recursion_bound(ieee14, mats14, scada14, criterion):
    pmu = np.zeros(14)
    pmu[[1, 5, 8]] = 1
    p = Placement.build(ieee14, pmu=pmu, injections=scada14[0], flows=scada14[1])
    runs = transitions = violations = 0
    seed = 0
    while runs < 50 and seed < 500:
        rng = np.random.default_rng([104, seed])
        seed += 1
        v_true = random_true_state(14, rng)
        z = synthesize_measurements(v_true, mats14, SIGMAS, rng)
        v0 = flat_state(14) + rng.uniform(-0.1, 0.1, 28)
        _, trace = gauss_newton(z, p, v0, mats14, v_true=v_true, sigmas=SIGMAS)
        if not trace.converged:
            continue
        ok_steps = error_recursion_check(trace, slack=1e-8)
        transitions += ok_steps.size
        violations += int((~ok_steps).sum())
        runs += 1
    ok = runs == 50 and violations == 0
    criterion(ok, f"{runs} converged runs, {transitions} transitions, {violations} violations")
    assert ok


def test_c05_mse_trace_bound(ieee14, mats14, criterion):
    rng = np.random.default_rng(105)
    checked = worst = 0
    while checked < 20:
        p = random_placement(ieee14, rng)
        rep = cop_metric(p, mats14, SIGMAS)
        if rep.beta <= 0:
            continue
        F = weighted_jacobian(flat_state(14), p, mats14)
        ratio = np.trace(np.linalg.inv(F.T @ F)) / rep.mse_bound
        worst = max(worst, ratio)
        checked += 1
    ok = worst <= 1.0
    criterion(ok, f"max trace/bound {worst:.4f} over {checked} placements")
    assert ok


def test_c06_sdp_oracles(two_bus, mats2, criterion):
    eig_err = 0.0
    for seed in range(10):
        rng = np.random.default_rng([106, seed])
        d = int(rng.integers(2, 57))
        B = rng.standard_normal((d, d))
        A = (B + B.T) / 2
        prog = LmiProgram(objective=np.array([1.0]), blocks=[LmiBlock(A, {0: -np.eye(d)})])
        sol = solve(prog)
        err = abs(sol.objective - np.linalg.eigvalsh(A)[0]) if sol.status == "optimal" else math.inf
        eig_err = max(eig_err, err)

    # the relaxed placement program on the two-bus grid against its two candidates
    inj, fl = sample_scada(two_bus, 0.15, np.random.default_rng(0))
    problem = PlacementProblem(GainModel(mats2, inj, fl, SIGMAS), 1)
    _, tau, _, _ = solve_placement_sdp(problem)
    exact = exhaustive_optimal(problem).cop.rho
    gap = abs(tau - exact)

    ok = eig_err <= 1e-6 and gap <= 1e-4
    criterion(ok, f"lambda_min max err {eig_err:.2e}; two-bus tau* {tau:.6e} vs exhaustive {exact:.6e} (|diff| {gap:.2e})")
    assert eig_err <= 1e-6, "lambda_min oracle"
    assert gap <= 1e-4, "two-bus relaxation optimum differs from the exhaustive optimum"


def test_c07_relaxation_quality(sweep14, criterion):
    result, elapsed = sweep14
    bad = []
    for k in range(3, 14):
        prop = next(r for r in result.table("proposed") if r["n_pmu"] == k)
        ex = next(r for r in result.table("exhaustive") if r["n_pmu"] == k)
        if not (prop["rho"] >= 0.9 * ex["rho"] and prop["tau"] >= ex["rho"]):
            bad.append(k)
    ok = not bad and elapsed < 600
    criterion(ok, f"failing N_PMU {bad or 'none'}, sweep {elapsed:.1f} s")
    assert ok


def test_c08_ordering(sweep14, criterion):
    result, _ = sweep14
    acc = {r["n_pmu"]: r for r in result.table("accuracy")}
    rows = [(r, acc[r["n_pmu"]]) for r in result.table("proposed")]
    rho_ok = all(p["rho"] >= a["rho"] for p, a in rows)
    beta_share = sum(a["beta"] >= p["beta"] for p, a in rows) / len(rows)
    ok = rho_ok and beta_share >= 0.8
    criterion(ok, f"rho(prop) >= rho(acc) in all rows: {rho_ok}; beta(acc) >= beta(prop) in {beta_share:.0%} of rows")
    assert ok


def test_c09_convergence_study(criterion):
    start = time.perf_counter()
    result = run_tve_experiment(ExperimentConfig(case="ieee30", n_pmu=5, trials=50, seed=0))
    elapsed = time.perf_counter() - start
    c = result.curves
    div_ok = c["proposed"].divergence_fraction <= min(c["none"].divergence_fraction, c["observability"].divergence_fraction)
    m_prop, m_acc = c["proposed"].mean_iters_to_threshold, c["accuracy"].mean_iters_to_threshold
    # an undefined mean (no converged trial reached the threshold) cannot satisfy the ordering
    iters_ok = math.isfinite(m_prop) and math.isfinite(m_acc) and m_prop <= m_acc
    ok = div_ok and iters_ok and elapsed < 900
    div = ", ".join(f"{m} {c[m].divergence_fraction:.2f}" for m in ("proposed", "none", "observability"))
    criterion(
        ok,
        f"divergence {div}; mean iters to TVE<0.1%: proposed {m_prop}, accuracy {m_acc} "
        f"(asymptotic TVE proposed {c['proposed'].asymptotic_tve:.3f}%); {elapsed:.0f} s",
    )
    assert div_ok, "divergence ordering"
    assert iters_ok, "iterations-to-threshold ordering"
    assert elapsed < 900


def test_c10_monotonicity(model14, criterion):
    rng = np.random.default_rng(110)
    checks = worst_beta = worst_phi = 0.0
    for _ in range(20):
        base = (rng.random(14) < rng.uniform(0.1, 0.7)).astype(float)
        b0, f0 = float(model14.beta(base)), float(model14.phi(base))
        for n in np.flatnonzero(base == 0):
            nxt = base.copy()
            nxt[n] = 1
            worst_beta = max(worst_beta, b0 - float(model14.beta(nxt)))
            worst_phi = max(worst_phi, float(model14.phi(nxt)) - f0)
            checks += 1
    # eigenvalue round-off only
    tol = 1e-10 * model14.lambda_max_M
    ok = worst_beta <= tol and worst_phi <= tol
    criterion(ok, f"{int(checks)} additions, max beta drop {worst_beta:.2e}, max phi rise {worst_phi:.2e}")
    assert ok


def test_c11_determinism(tmp_path, criterion):
    def run(tag):
        out = tmp_path / tag
        emit_report(run_cop_sweep(ExperimentConfig(case="ieee14", pmu_range=(3, 5), n_samples=300, seed=7)), out / "sweep")
        tve_cfg = ExperimentConfig(case="ieee14", n_pmu=3, trials=6, max_iters=20, n_samples=200, seed=7)
        emit_report(run_tve_experiment(tve_cfg), out / "tve")
        return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))}

    a, b = run("a"), run("b")
    same = sorted(str(k) for k in a if a[k] == b.get(k))
    ok = bool(a) and a == b
    criterion(ok, f"{len(same)}/{len(a)} CSV files identical")
    assert ok
