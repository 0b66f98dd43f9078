"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
Three assertions are known to fail by construction of the criteria
themselves (see notes in each test and the project README): the
two-grid fidelity bound of 1e-6 (the method's intrinsic error at
H = 1/8 is 2e-6..4e-6, matching the criterion's own "100x above RQ tol"
derivation of 5e-6), the adaptive cost-slope window (the pinned
tolerances are bias-dominated for this QMC accuracy, so cost grows as a
level-addition staircase), and Problem 2's per-level variance decay
(its oscillatory modes are invisible on the coarsest mesh, so the
level-0 variance is roundoff zero and level 1 necessarily exceeds it).
"""

import math

import numpy as np
import pytest

from mlqmc_eig import (
    adaptive_mlqmc,
    build_uniform_mesh,
    default_generating_vector,
    default_levels,
    lattice_point,
    lattice_points,
    mass_interior,
    max_nn_distance,
    mc_estimate,
    mlqmc_estimate,
    problem1,
    problem2,
    qmc_single_level,
    smallest_eigenpair_cold,
    star_discrepancy_bruteforce,
    stiffness_interior,
    two_grid_eigenpair,
)
from mlqmc_eig.estimators import EstimatorOptions, level_params

RQ_TOL = 5e-8
Z = default_generating_vector()
P1 = problem1(2.0)


def report(num, name, ok, detail):
    print(f"ACCEPTANCE {num:2d} ({name}): {'PASS' if ok else 'FAIL'} :: {detail}")


def direct_lambda(problem, m, y, s=64):
    mesh = build_uniform_mesh(m)
    A = stiffness_interior(mesh, problem, np.asarray(y)[:s])
    M = mass_interior(mesh, problem)
    pair, _ = smallest_eigenpair_cold(A, M, RQ_TOL)
    return pair.lam


def test_criterion_1_deterministic_fe_rate():
    y = np.zeros(64)
    lams = [direct_lambda(P1, m, y) for m in (3, 4, 5, 6)]
    exact = 2 * math.pi ** 2
    errors = [lam - exact for lam in lams]
    ratios = [errors[i] / errors[i + 1] for i in range(3)]
    from_above = all(e > 0 for e in errors)
    in_window = all(3.5 <= r <= 4.5 for r in ratios)
    report(1, "deterministic FE rate", from_above and in_window,
           f"errors={['%.3e' % e for e in errors]} ratios={['%.2f' % r for r in ratios]}")
    assert from_above
    assert in_window


def test_criterion_2_two_grid_fidelity():
    # NOTE: asserted at the stated 1e-6; the criterion's own derivation
    # (100x above RQ tol 5e-8) gives 5e-6, which the measured error meets.
    coarse = build_uniform_mesh(3)
    fine = build_uniform_mesh(5)
    diffs = []
    for k in range(16):
        y = lattice_point(Z, 16, k, dim=64) - 0.5
        lam_direct = direct_lambda(P1, 5, y)
        lam_tg, _, _, _ = two_grid_eigenpair(P1, y, (coarse, 8), (fine, 64),
                                             tol=RQ_TOL)
        diffs.append(abs(lam_tg - lam_direct))
    worst = max(diffs)
    ok = worst <= 1e-6
    report(2, "two-grid fidelity", ok,
           f"max|tg-direct|={worst:.3e} (stated bound 1e-6; "
           f"100x RQ tol = 5e-6 would {'pass' if worst <= 5e-6 else 'fail'})")
    assert ok, (
        f"two-grid vs direct difference {worst:.3e} exceeds the stated 1e-6; "
        "it satisfies the criterion's own '100x above RQ tol 5e-8' = 5e-6 "
        "(see notes/decisions ledger: intrinsic H^8-term error at H=1/8)"
    )


def test_criterion_3_warm_start_economy():
    levels = [level_params(1, 256)]
    warm = mlqmc_estimate(P1, levels, 2, Z, seed=3,
                          options=EstimatorOptions(warm_start=True))
    cold = mlqmc_estimate(P1, levels, 2, Z, seed=3,
                          options=EstimatorOptions(warm_start=False))
    ratio = warm.levels[0].coarse_linear_solves / cold.levels[0].coarse_linear_solves
    agree = abs(warm.estimate - cold.estimate)
    ok = ratio <= 0.8 and agree <= 1e-6
    report(3, "warm-start economy", ok,
           f"coarse-solve ratio={ratio:.3f} (<=0.8), |warm-cold|={agree:.2e}")
    assert ratio <= 0.8
    assert agree <= 1e-6


def test_criterion_4_qmc_variance_rate():
    ns = [2 ** m for m in range(4, 11)]
    v_qmc = [qmc_single_level(P1, 3, 64, n, 8, Z, seed=0).total_variance
             for n in ns]
    slope_qmc = float(np.polyfit(np.log2(ns), np.log2(v_qmc), 1)[0])
    v_mc = [mc_estimate(P1, 3, 64, n, seed=11).total_variance for n in ns]
    slope_mc = float(np.polyfit(np.log2(ns), np.log2(v_mc), 1)[0])
    ok = slope_qmc <= -1.2 and -1.3 <= slope_mc <= -0.7
    report(4, "QMC variance rate", ok,
           f"qmc slope={slope_qmc:.2f} (<=-1.2), mc slope={slope_mc:.2f} in [-1.3,-0.7]")
    assert slope_qmc <= -1.2
    assert -1.3 <= slope_mc <= -0.7


def test_criterion_5_level_variance_decay():
    rep = mlqmc_estimate(P1, default_levels([64, 64, 64, 64]), 8, Z, seed=5)
    v = [lv.variance for lv in rep.levels]
    decreasing = all(v[i + 1] < v[i] for i in range(3))
    ok = decreasing and v[3] / v[0] <= 0.1
    report(5, "level-variance decay", ok,
           f"V={['%.2e' % x for x in v]} V3/V0={v[3] / v[0]:.2e}")
    assert decreasing
    assert v[3] / v[0] <= 0.1


def test_criterion_6_telescoping_consistency():
    ml = mlqmc_estimate(P1, default_levels([256, 64, 16]), 8, Z, seed=0)
    sl = qmc_single_level(P1, 5, 64, 128, 8, Z, seed=0)
    diff = abs(ml.estimate - sl.estimate)
    spread = 3 * math.sqrt(ml.total_variance + sl.total_variance)
    ok = diff <= spread
    report(6, "telescoping consistency", ok,
           f"|ML-SL|={diff:.2e} <= 3*combined sigma={spread:.2e}")
    assert diff <= spread


def test_criterion_7_adaptive_cost_slope():
    # NOTE: asserted at the stated window [0.7, 1.8]; at these tolerances
    # the variance target is already met at N=16, so cost follows the
    # bias-driven level staircase and the slope sits near 0.15.
    eps_list = [0.04, 0.02, 0.01, 0.005]
    costs = []
    for eps in eps_list:
        rep = adaptive_mlqmc(P1, eps, 8, Z, seed=0)
        assert rep.total_variance <= eps ** 2 / 2
        costs.append(rep.total_linear_solves)
    slope = float(np.polyfit(np.log(1.0 / np.asarray(eps_list)),
                             np.log(np.asarray(costs, dtype=float)), 1)[0])
    ok = 0.7 <= slope <= 1.8
    report(7, "adaptive cost slope", ok,
           f"solve counts={costs}, slope={slope:.2f} (window [0.7, 1.8])")
    assert ok, (
        f"cost slope {slope:.2f} outside [0.7, 1.8]: the pinned tolerances "
        "are bias-dominated for this estimator's variance levels (see "
        "notes/decisions ledger; the -1 cost regime needs eps <~ 2e-3)"
    )


def test_criterion_8_lattice_arithmetic_oracle():
    z8 = Z.components(8)
    n = 2 ** 10
    rng = np.random.default_rng(8)
    worst = 0.0
    for k in rng.integers(0, n, size=1000):
        exact = lattice_point(Z, n, int(k), dim=8)
        floating = np.mod(float(k) * z8.astype(float) / n, 1.0)
        worst = max(worst, np.abs(exact - floating).max())
    nested = np.array_equal(lattice_points(Z, n, 8),
                            lattice_points(Z, 2 * n, 8)[::2])
    ok = worst <= 1e-12 and nested
    report(8, "lattice arithmetic oracle", ok,
           f"max|exact-float|={worst:.1e}, nesting exact={nested}")
    assert worst <= 1e-12
    assert nested


def test_criterion_9_discrepancy_diagnostics():
    exact = all(
        star_discrepancy_bruteforce((np.arange(n) / n)[:, None]) == 1.0 / n
        for n in (2, 4, 8)
    )
    dists = [max_nn_distance(lattice_points(Z, 2 ** m, 2))
             for m in range(4, 13)]
    # "decreases monotonically" read as non-increasing: the pinned leading
    # components (1, 182667) produce exact plateaus (e.g. 3/32 = 6/64), so
    # a strictly-decreasing reading is unsatisfiable for this point family.
    non_increasing = all(b <= a for a, b in zip(dists, dists[1:]))
    decayed = dists[-1] < dists[0]
    ok = exact and non_increasing and decayed
    report(9, "discrepancy diagnostics", ok,
           f"D*(k/N)=1/N exact={exact}, nn dists {dists[0]:.4f}->{dists[-1]:.4f} "
           f"non-increasing={non_increasing}")
    assert exact
    assert non_increasing
    assert decayed


def test_criterion_10_problem2_smoke():
    # NOTE: the variance-decay clause is asserted as stated; level 0 cannot
    # carry variance for Problem 2 because its modes vanish on the h=1/8
    # quadrature nodes, so V_0 is roundoff zero and V_1 > V_0.
    eps = 0.05
    p2 = problem2(2.0, 2.0, 2.0, 2.0)
    rep = adaptive_mlqmc(p2, eps, 8, Z, seed=0)
    v = [lv.variance for lv in rep.levels]
    within = rep.total_variance <= eps ** 2 / 2
    positive = rep.estimate > 0
    decreasing = all(v[i + 1] < v[i] for i in range(len(v) - 1))
    ok = within and positive and decreasing
    report(10, "Problem 2 smoke", ok,
           f"sumV={rep.total_variance:.2e} (<= {eps ** 2 / 2:.2e}), "
           f"estimate={rep.estimate:.4f}, V={['%.2e' % x for x in v]}")
    assert within
    assert positive
    assert decreasing, (
        f"V_l not decreasing: {v}; level 0 variance is structurally ~0 for "
        "Problem 2 at h0=1/8 (see notes/decisions ledger)"
    )
