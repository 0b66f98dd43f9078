import json
import math

import numpy as np
import pytest
import scipy.linalg

from mlqmc_eig import (
    CoefficientSeries,
    EstimatorOptions,
    MlqmcReport,
    adaptive_mlqmc,
    build_uniform_mesh,
    default_levels,
    functional_of_eigenfunction,
    level_params,
    mass_interior,
    mc_estimate,
    mlmc_estimate,
    mlqmc_estimate,
    qmc_single_level,
    sample_eigenvalue_direct,
    sample_level_difference,
    stiffness_interior,
    two_grid_eigenpair,
)
from mlqmc_eig.mesh_fem import CoefficientBoundError


class TestLevelParams:
    def test_meshwidth_rule(self):
        for ell in range(5):
            lp = level_params(ell, 16)
            assert lp.h == 2.0 ** -(ell + 3)

    def test_coarse_rules_fixed_policy(self):
        # H = min(h^(1/4), h0) quantized to the mesh family; S = ceil(sqrt(s))
        for ell in range(8):
            lp = level_params(ell, 16, s=64)
            assert lp.coarse_h == 1 / 8
            assert lp.coarse_s == 8

    def test_coarse_mesh_deepens_eventually(self):
        lp = level_params(10, 16)   # h = 2^-13, h^(1/4) = 2^-3.25
        assert lp.coarse_exponent == 4

    def test_geometric_policy(self):
        lp = level_params(3, 16, s=64, s_policy="geometric", s0=4)
        assert lp.s == 32
        assert lp.prev_s == 16
        assert lp.coarse_s == max(math.isqrt(31) + 1, 4)

    def test_truncations_monotone(self):
        ss = [level_params(e, 16, s=64, s_policy="geometric", s0=4).s
              for e in range(6)]
        assert all(a <= b for a, b in zip(ss, ss[1:]))

    def test_power_of_two_points(self):
        with pytest.raises(ValueError):
            level_params(0, 24)


class TestSampleOps:
    def test_direct_sample_deterministic_laplacian(self, prob1):
        lp = level_params(0, 16)
        lam, _ = sample_eigenvalue_direct(prob1, lp, np.zeros(64))
        mesh = build_uniform_mesh(3)
        A = stiffness_interior(mesh, prob1, np.zeros(64))
        M = mass_interior(mesh, prob1)
        dense = scipy.linalg.eigh(A.toarray(), M.toarray(), eigvals_only=True)[0]
        assert lam == pytest.approx(dense, abs=5e-8)
        assert lam > 0

    def test_direct_sample_bitwise_repeatable(self, prob1, rng):
        lp = level_params(0, 16)
        y = rng.random(64) - 0.5
        lam1, _ = sample_eigenvalue_direct(prob1, lp, y)
        lam2, _ = sample_eigenvalue_direct(prob1, lp, y)
        assert lam1 == lam2

    def test_level0_difference_is_value(self, prob1, rng):
        lp = level_params(0, 16)
        y = rng.random(64) - 0.5
        delta, pair, _ = sample_level_difference(prob1, lp, y)
        assert delta > 0
        assert delta == pair.lam

    def test_difference_small_vs_level(self, prob1, rng):
        lp0 = level_params(0, 16)
        lp1 = level_params(1, 16)
        y = rng.random(64) - 0.5
        lam0, _, _ = sample_level_difference(prob1, lp0, y)
        delta, _, _ = sample_level_difference(prob1, lp1, y)
        assert abs(delta) < abs(lam0)

    def test_matches_standalone_two_grid_bitwise(self, prob1, zvec):
        lp = level_params(1, 16)
        y = np.asarray(mlqmc_lattice_sample(zvec, 16, 5, 64))
        delta, _, _ = sample_level_difference(prob1, lp, y)
        coarse = build_uniform_mesh(lp.coarse_exponent)
        lam_f, _, _, _ = two_grid_eigenpair(
            prob1, y, (coarse, lp.coarse_s),
            (build_uniform_mesh(lp.mesh_exponent), lp.s))
        lam_p, _, _, _ = two_grid_eigenpair(
            prob1, y, (coarse, lp.coarse_s),
            (build_uniform_mesh(lp.mesh_exponent - 1), lp.prev_s))
        assert delta == lam_f - lam_p


def mlqmc_lattice_sample(zvec, n, k, dim):
    from mlqmc_eig import lattice_point
    return lattice_point(zvec, n, k, dim=dim) - 0.5


class TestMlqmcEstimate:
    def test_single_level_reduces_to_qmc(self, prob1, zvec):
        levels = [level_params(0, 32)]
        ml = mlqmc_estimate(prob1, levels, 4, zvec, seed=3)
        sl = qmc_single_level(prob1, 3, 64, 32, 4, zvec, seed=3)
        assert ml.estimate == sl.estimate
        assert ml.levels[0].per_shift == sl.levels[0].per_shift

    def test_variance_additivity(self, prob1, zvec):
        rep = mlqmc_estimate(prob1, default_levels([32, 16]), 4, zvec, seed=5)
        assert rep.total_variance == sum(lv.variance for lv in rep.levels)

    def test_warm_toggle_matched_seed(self, prob1, zvec):
        levels = default_levels([32, 16])
        warm = mlqmc_estimate(prob1, levels, 2, zvec, seed=1,
                              options=EstimatorOptions(warm_start=True))
        cold = mlqmc_estimate(prob1, levels, 2, zvec, seed=1,
                              options=EstimatorOptions(warm_start=False))
        assert abs(warm.estimate - cold.estimate) <= 1e-6
        assert warm.total_linear_solves < cold.total_linear_solves

    def test_level_variance_drops(self, prob1, zvec):
        rep = mlqmc_estimate(prob1, default_levels([64, 32]), 4, zvec, seed=2)
        assert rep.levels[1].variance < rep.levels[0].variance

    def test_determinism_and_threads(self, prob1, zvec):
        levels = default_levels([16, 16])
        a = mlqmc_estimate(prob1, levels, 2, zvec, seed=11)
        b = mlqmc_estimate(prob1, levels, 2, zvec, seed=11)
        c = mlqmc_estimate(prob1, levels, 2, zvec, seed=11, max_workers=4)
        assert a.estimate == b.estimate == c.estimate
        assert a.to_dict()["levels"][0]["per_shift"] == \
            c.to_dict()["levels"][0]["per_shift"]

    def test_two_grid_toggle_consistent(self, prob1, zvec):
        levels = default_levels([16, 8])
        enhanced = mlqmc_estimate(prob1, levels, 2, zvec, seed=4)
        plain = mlqmc_estimate(prob1, levels, 2, zvec, seed=4,
                               options=EstimatorOptions(two_grid=False,
                                                        warm_start=False))
        # same points, same bias target; two-grid error is far below the
        # sampling scale
        assert enhanced.estimate == pytest.approx(plain.estimate, abs=1e-4)

    def test_report_roundtrip(self, prob1, zvec):
        rep = mlqmc_estimate(prob1, default_levels([16, 8]), 2, zvec, seed=6)
        clone = MlqmcReport.from_dict(json.loads(json.dumps(rep.to_dict())))
        assert clone.estimate == rep.estimate
        assert clone.levels[1].per_shift == rep.levels[1].per_shift
        assert clone.to_dict() == rep.to_dict()

    def test_csv_rows_contract(self, prob1, zvec):
        rep = mlqmc_estimate(prob1, default_levels([16, 8]), 2, zvec, seed=6)
        rows = rep.level_csv_rows()
        assert rows[0] == ["level", "h", "s", "H", "S", "N", "R", "Q_hat", "V",
                           "cost_seconds", "solves", "rq_iters_median"]
        assert len(rows) == 3

    def test_failed_sample_aborts(self, zvec):
        fragile = CoefficientSeries(
            name="fragile",
            a0=lambda x: np.full(np.asarray(x).shape[:-1], 0.4),
            a_term=lambda j, x: np.ones(np.asarray(x).shape[:-1]) if j == 1
            else np.zeros(np.asarray(x).shape[:-1]),
            c=lambda x: np.ones(np.asarray(x).shape[:-1]),
            a_min=-0.1,    # deliberately violated for some y
            a_max=0.9,
        )
        with pytest.raises(CoefficientBoundError):
            mlqmc_estimate(fragile, [level_params(0, 16, s=1)], 2, zvec, seed=0)


class TestBaselines:
    def test_mc_one_sample(self, prob1):
        rep = mc_estimate(prob1, 3, 64, 1, seed=21)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=21, spawn_key=(10001,)))
        y = rng.random(64) - 0.5
        lam, _ = sample_eigenvalue_direct(prob1, level_params(0, 16), y)
        assert rep.estimate == lam

    def test_mc_standard_error_oracle(self, prob1):
        rep = mc_estimate(prob1, 3, 64, 32, seed=22)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=22, spawn_key=(10001,)))
        vals = []
        for _ in range(32):
            y = rng.random(64) - 0.5
            lam, _ = sample_eigenvalue_direct(prob1, level_params(0, 16), y)
            vals.append(lam)
        vals = np.array(vals)
        oracle = vals.var(ddof=1) / 32
        assert rep.total_variance == pytest.approx(oracle, rel=1e-12)
        assert rep.estimate == pytest.approx(vals.mean(), rel=1e-14)

    def test_mc_qmc_statistical_agreement(self, prob1, zvec):
        mc = mc_estimate(prob1, 3, 64, 256, seed=23)
        qmc = qmc_single_level(prob1, 3, 64, 64, 8, zvec, seed=23)
        spread = 3 * math.sqrt(mc.total_variance + qmc.total_variance)
        assert abs(mc.estimate - qmc.estimate) <= spread

    def test_mlmc_telescopes(self, prob1, zvec):
        ml = mlmc_estimate(prob1, [128, 32], seed=24)
        qmc = qmc_single_level(prob1, 4, 64, 64, 8, zvec, seed=25)
        spread = 3 * math.sqrt(ml.total_variance + qmc.total_variance)
        assert abs(ml.estimate - qmc.estimate) <= spread
        assert ml.kind == "mlmc"


class TestAdaptive:
    def test_loose_tolerance_minimal_work(self, prob1, zvec):
        rep = adaptive_mlqmc(prob1, 0.625, 8, zvec, seed=0)
        assert max(lv.ell for lv in rep.levels) <= 1
        assert all(lv.n_points == 16 for lv in rep.levels)
        assert rep.tolerance_achieved

    def test_variance_postcondition(self, prob1, zvec):
        eps = 0.05
        rep = adaptive_mlqmc(prob1, eps, 8, zvec, seed=0)
        assert rep.total_variance <= eps ** 2 / 2

    def test_trajectory_recorded(self, prob1, zvec):
        rep = adaptive_mlqmc(prob1, 0.625, 8, zvec, seed=0)
        assert rep.trajectory[0] == {"action": "add_level", "level": 0, "N": 16}

    def test_rejects_bad_inputs(self, prob1, zvec):
        with pytest.raises(ValueError):
            adaptive_mlqmc(prob1, -1.0, 8, zvec, seed=0)
        with pytest.raises(ValueError):
            adaptive_mlqmc(prob1, 0.5, 1, zvec, seed=0)


class TestFunctional:
    def test_constant_one_gives_area(self):
        mesh = build_uniform_mesh(3)
        assert functional_of_eigenfunction(np.ones(mesh.n_nodes), mesh) \
            == pytest.approx(1.0, abs=1e-13)

    def test_sign_flip(self, prob1, rng):
        mesh = build_uniform_mesh(3)
        u = rng.standard_normal(mesh.n_interior)
        g = functional_of_eigenfunction(u, mesh)
        assert functional_of_eigenfunction(-u, mesh) == pytest.approx(-g)

    def test_ground_state_positive_mean(self, prob1):
        # dense-oracle eigenfunction, sign-fixed like the solver does
        mesh = build_uniform_mesh(3)
        A = stiffness_interior(mesh, prob1, np.zeros(1))
        M = mass_interior(mesh, prob1)
        _, vecs = scipy.linalg.eigh(A.toarray(), M.toarray())
        u = vecs[:, 0]
        if u[np.argmax(np.abs(u))] < 0:
            u = -u
        assert functional_of_eigenfunction(u, mesh) > 0

    def test_rejects_unknown_kind(self):
        mesh = build_uniform_mesh(2)
        with pytest.raises(ValueError):
            functional_of_eigenfunction(np.ones(mesh.n_nodes), mesh, kind="flux")
