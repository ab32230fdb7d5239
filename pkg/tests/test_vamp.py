"""Message-passing iterations, Lipschitz bounds and optimality checks."""

import numpy as np
import pytest

from rivamp.errors import InvariantError, ParameterError
from rivamp.experiments import ProblemInstance, generate_instance
from rivamp.proximal import Penalty, prox_vector
from rivamp.spectral import MatrixEnsemble, marchenko_pastur_law, row_orthogonal_law
from rivamp.state_evolution import Prior, SEParams, solve_se
from rivamp.vamp import (
    VampConfig,
    config_from_fixed_point,
    lambda2_threshold,
    lipschitz_bound_o1,
    lipschitz_bound_o2,
    optimality_residual,
    run_vamp,
    vamp_init,
    vamp_step_adaptive,
    vamp_step_oracle,
)


def make_config(a1, a2, penalty, **kw):
    return VampConfig(a1=a1, a2=a2, v=1.0 / (a1 + a2), penalty=penalty, **kw)


def se_setup(penalty, law, rho=0.3, delta0=0.01, tol=1e-13):
    params = SEParams(prior=Prior(rho), penalty=penalty, delta0=delta0, law=law, tol=tol)
    return params, solve_se(params)


class TestInit:
    def test_deterministic(self):
        cfg = make_config(1.0, 1.0, Penalty(0.1, 0.0))
        a = vamp_init(64, cfg, seed=5)
        b = vamp_init(64, cfg, seed=5)
        np.testing.assert_array_equal(a.b1, b.b1)

    def test_two_seeds_nearly_uncorrelated(self):
        cfg = make_config(1.0, 1.0, Penalty(0.1, 0.0))
        n = 4096
        a = vamp_init(n, cfg, seed=1).b1
        b = vamp_init(n, cfg, seed=2).b1
        corr = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert abs(corr) <= 3.0 / np.sqrt(n)

    def test_scalar_dimension(self):
        cfg = make_config(1.0, 1.0, Penalty())
        state = vamp_init(1, cfg, seed=0)
        assert state.b1.shape == (1,)

    def test_variance_pinned(self):
        cfg = make_config(0.5, 1.5, Penalty(), b1_variance=0.31)
        b1 = vamp_init(1000, cfg, seed=3).b1
        assert np.mean(b1 * b1) == pytest.approx(0.31, rel=1e-12)


class TestConfig:
    def test_consistency_enforced(self):
        with pytest.raises(InvariantError):
            VampConfig(a1=1.0, a2=1.0, v=0.7, penalty=Penalty())

    def test_from_fixed_point_checks_spectrum(self):
        params, report = se_setup(Penalty(0.1, 0.0), row_orthogonal_law(2.0))
        cfg = config_from_fixed_point(report, params)
        assert cfg.a1 + cfg.a2 == pytest.approx(1.0 / cfg.v, rel=1e-12)

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            make_config(1.0, 1.0, Penalty(), mode="annealed")


class TestOracleStep:
    def test_ridge_lands_in_one_pass(self):
        # With a quadratic penalty the first message cancels and the data-side
        # estimate is the shrunken least-squares solution immediately.
        lam2 = 0.7
        law = marchenko_pastur_law(2.0)
        params, report = se_setup(Penalty(0.0, lam2), law)
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 40), 0.3, 0.01, seed=2)
        cfg = config_from_fixed_point(report, params)
        state = vamp_init(40, cfg, seed=0)
        state = vamp_step_oracle(state, cfg, inst)
        ridge = np.linalg.solve(
            inst.f_matrix.T @ inst.f_matrix + cfg.a2 * np.eye(40), inst.f_matrix.T @ inst.y
        )
        assert np.max(np.abs(state.b2)) < 1e-8
        np.testing.assert_allclose(state.x2, ridge, atol=1e-8)
        again = vamp_step_oracle(state, cfg, inst)
        np.testing.assert_allclose(again.x1, ridge, atol=1e-8)

    def test_noiseless_full_rank_recovers_signal(self):
        law = row_orthogonal_law(2.0)
        params, report = se_setup(Penalty(), law, delta0=0.0)
        inst = generate_instance(MatrixEnsemble("row-orthogonal", 2.0, 30), 0.3, 0.0, seed=4)
        cfg = config_from_fixed_point(report, params, max_iters=200, tol=1e-26)
        est, trace, _ = run_vamp(inst, cfg, seed=4)
        np.testing.assert_allclose(est, inst.x0, atol=1e-9)

    def test_matches_transcription(self):
        # Dense-solve straight-line rewrite of one sweep.
        rng = np.random.default_rng(6)
        f = rng.normal(size=(8, 5))
        x0 = rng.normal(size=5)
        y = f @ x0 + 0.1 * rng.normal(size=8)
        inst = ProblemInstance(f_matrix=f, x0=x0, w=y - f @ x0, y=y, delta0=0.01)
        pen = Penalty(0.3, 0.2)
        cfg = make_config(0.8, 1.1, pen)
        state = vamp_init(5, cfg, seed=9)

        b1 = state.b1.copy()
        x1 = prox_vector(pen, 1.0 / cfg.a1, b1 / cfg.a1)
        b2 = x1 / cfg.v - b1
        x2 = np.linalg.solve(f.T @ f + cfg.a2 * np.eye(5), f.T @ y + b2)
        b1_next = x2 / cfg.v - b2

        out = vamp_step_oracle(state, cfg, inst)
        np.testing.assert_allclose(out.x1, x1, atol=1e-12)
        np.testing.assert_allclose(out.b2, b2, atol=1e-12)
        np.testing.assert_allclose(out.x2, x2, atol=1e-12)
        np.testing.assert_allclose(out.b1, b1_next, atol=1e-12)


class TestAdaptiveStep:
    def test_matches_oracle_on_exact_spectrum(self):
        # Ridge penalty and row-orthogonal design make both adaptive readouts
        # exact, so the adaptive sweep must coincide with the oracle sweep.
        lam2 = 0.8
        law = row_orthogonal_law(2.0)
        params, report = se_setup(Penalty(0.0, lam2), law)
        inst = generate_instance(MatrixEnsemble("row-orthogonal", 2.0, 32), 0.3, 0.01, seed=1)
        cfg = config_from_fixed_point(report, params)
        state = vamp_init(32, cfg, seed=2)
        a = vamp_step_oracle(state, cfg, inst)
        b = vamp_step_adaptive(state, cfg, inst)
        np.testing.assert_allclose(a.x1, b.x1, atol=1e-8)
        np.testing.assert_allclose(a.x2, b.x2, atol=1e-8)
        np.testing.assert_allclose(a.b1, b.b1, atol=1e-8)

    def test_ridge_variance_readout(self):
        # V1 = <prox'> / A1 is exactly 1 / (A1 + lam2) for a quadratic penalty.
        from rivamp.proximal import jacobian_trace_average

        lam2, a1 = 0.4, 1.3
        rng = np.random.default_rng(3)
        y = rng.normal(size=50)
        v1 = jacobian_trace_average(Penalty(0.0, lam2), 1.0 / a1, y) / a1
        assert v1 == pytest.approx(1.0 / (a1 + lam2), rel=1e-14)

    def test_row_orthogonal_trace(self):
        inst = generate_instance(MatrixEnsemble("row-orthogonal", 2.0, 24), 0.3, 0.01, seed=5)
        for a2 in (0.3, 1.0, 2.5):
            assert inst.loss_oracle.inverse_trace_average(a2) == pytest.approx(
                1.0 / (1.0 + a2), rel=1e-12
            )


class TestLipschitzBounds:
    def test_equal_steps_are_nonexpansive(self):
        assert lipschitz_bound_o1(0.0, 0.0, 1.3, 1.3) == 1.0
        assert lipschitz_bound_o2(0.0, 4.0, 1.3, 1.3) == 1.0

    def test_no_curvature_case(self):
        assert lipschitz_bound_o1(0.0, 0.0, 2.0, 1.0) == 2.0
        assert lipschitz_bound_o1(0.0, np.inf, 2.0, 1.0) == 2.0

    def test_row_orthogonal_data_side(self):
        assert lipschitz_bound_o2(1.0, 1.0, 0.5, 1.5) == pytest.approx(0.2, abs=1e-15)

    def test_elastic_net_case(self):
        # sigma1 > 0 with beta1 infinite: the smooth term saturates at 1.
        assert lipschitz_bound_o1(0.1, np.inf, 0.5, 2.0) == pytest.approx(
            max((2.0 - 0.1) / 0.6, 1.0)
        )

    def test_ridge_case_formula(self):
        val = lipschitz_bound_o1(0.5, 0.5, 1.0, 2.0)
        assert val == pytest.approx(np.sqrt((4.0 - 1.0) / 2.25 + 1.0), rel=1e-12)

    def test_invalid_ordering(self):
        with pytest.raises(ParameterError):
            lipschitz_bound_o1(1.0, 0.5, 1.0, 1.0)
        with pytest.raises(ParameterError):
            lipschitz_bound_o2(2.0, 1.0, 1.0, 1.0)


class TestLambda2Threshold:
    def test_zero_spread_contracts_at_any_ridge(self):
        assert lambda2_threshold(1.0, 1.0, 0.0, o1_cap=1.0) <= 0.0

    def test_direct_formula(self):
        assert lambda2_threshold(0.0, 4.0, 0.0, o1_cap=2.0) == 8.0

    def test_threshold_separates_fig2_cells(self):
        # The certified threshold is an upper bound on where divergence can
        # occur: the diverging (alpha=0.1, lam2=0.1) cell sits below it.
        law = marchenko_pastur_law(0.1)
        thr = lambda2_threshold(law.support_min, law.support_max, 0.0, o1_cap=1.0)
        assert thr > 0.1


class TestRunVamp:
    def test_contraction_case_respects_bound(self):
        lam1, lam2 = 0.1, 0.5
        law = marchenko_pastur_law(2.0)
        params, report = se_setup(Penalty(lam1, lam2), law)
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 120), 0.3, 0.01, seed=8)
        cfg = config_from_fixed_point(report, params, max_iters=2000, tol=1e-26)
        est, trace, checks = run_vamp(inst, cfg, seed=8)
        assert trace.converged
        bound = lipschitz_bound_o1(lam2, np.inf, report.a1, report.a2) * lipschitz_bound_o2(
            law.support_min, law.support_max, report.a1, report.a2
        )
        assert checks.contraction_ratio <= bound + 0.05
        assert checks.kkt_residual <= 1e-8

    def test_fig2_divergent_cell(self):
        law = marchenko_pastur_law(0.1)
        params, report = se_setup(Penalty(0.1, 0.1), law)
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 0.1, 100), 0.3, 0.01, seed=0)
        cfg = config_from_fixed_point(report, params, max_iters=500, tol=1e-8)
        _, trace, _ = run_vamp(inst, cfg, seed=0)
        assert trace.diverged and not trace.converged

    def test_fig2_stabilized_cell(self):
        law = marchenko_pastur_law(0.1)
        params, report = se_setup(Penalty(0.1, 0.3), law)
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 0.1, 100), 0.3, 0.01, seed=0)
        cfg = config_from_fixed_point(report, params, max_iters=500, tol=1e-8)
        _, trace, _ = run_vamp(inst, cfg, seed=0)
        assert trace.converged
        assert trace.d[-1] <= 1e-8

    def test_peaceman_rachford_reduction_nonexpansive(self):
        # Forcing a1 = a2 = 1/(2v) makes every sweep a composition of
        # reflections; successive distances must be monotone to rounding.
        lam1, lam2 = 0.1, 0.1
        law = marchenko_pastur_law(2.0)
        params, report = se_setup(Penalty(lam1, lam2), law)
        v = 1.0 / (report.a1 + report.a2)
        half = 1.0 / (2.0 * v)
        cfg = VampConfig(
            a1=half, a2=half, v=v, penalty=Penalty(lam1, lam2), max_iters=400, tol=1e-30,
            b1_variance=0.31,
        )
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 80), 0.3, 0.01, seed=9)
        _, trace, _ = run_vamp(inst, cfg, seed=9)
        d = trace.d[trace.d > 1e-24]
        assert np.all(d[1:] <= d[:-1] * (1.0 + 1e-10))


class TestOptimalityResidual:
    def test_exact_ridge_solution(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 30), 0.3, 0.01, seed=10)
        lam2 = 0.6
        x = np.linalg.solve(
            inst.f_matrix.T @ inst.f_matrix + lam2 * np.eye(30), inst.f_matrix.T @ inst.y
        )
        assert optimality_residual(x, inst, Penalty(0.0, lam2)) <= 1e-10

    def test_null_solution_condition(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 25), 0.3, 0.01, seed=11)
        lam1 = float(np.max(np.abs(inst.f_matrix.T @ inst.y))) + 1e-9
        assert optimality_residual(np.zeros(25), inst, Penalty(lam1, 0.0)) == 0.0

    def test_converged_run_satisfies_kkt(self):
        law = row_orthogonal_law(2.0)
        params, report = se_setup(Penalty(0.1, 0.0), law)
        inst = generate_instance(MatrixEnsemble("row-orthogonal", 2.0, 60), 0.3, 0.01, seed=12)
        cfg = config_from_fixed_point(report, params, max_iters=500, tol=1e-26)
        est, trace, checks = run_vamp(inst, cfg, seed=12)
        assert trace.converged
        assert checks.kkt_residual <= 1e-8
