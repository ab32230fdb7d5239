"""Instance generation, the coordinate-descent baseline, and sweeps."""

import numpy as np
import pytest

from rivamp.errors import ParameterError
from rivamp.experiments import (
    CDResult,
    ProblemInstance,
    SweepResult,
    convergence_study,
    coordinate_descent_solve,
    empirical_mse,
    generate_instance,
    sweep_alpha,
    sweep_lambda,
)
from rivamp.proximal import Penalty
from rivamp.spectral import MatrixEnsemble, row_orthogonal_law
from rivamp.state_evolution import Prior, SEParams, solve_se
from rivamp.vamp import config_from_fixed_point, run_vamp


def objective(instance, penalty, x):
    r = instance.y - instance.f_matrix @ x
    return 0.5 * float(r @ r) + penalty.value(x)


class TestGenerateInstance:
    def test_zero_sparsity(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 50), 0.0, 0.01, seed=0)
        np.testing.assert_array_equal(inst.x0, np.zeros(50))
        np.testing.assert_array_equal(inst.y, inst.w)

    def test_noiseless(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 50), 0.3, 0.0, seed=0)
        np.testing.assert_array_equal(inst.y, inst.f_matrix @ inst.x0)

    def test_sparsity_concentrates(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 0.5, 10_000), 0.3, 0.01, seed=1)
        frac = np.mean(inst.x0 != 0)
        assert abs(frac - 0.3) < 0.015

    def test_deterministic(self):
        ens = MatrixEnsemble("gaussian-iid", 2.0, 30)
        a = generate_instance(ens, 0.3, 0.01, seed=7)
        b = generate_instance(ens, 0.3, 0.01, seed=7)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.x0, b.x0)


class TestCoordinateDescent:
    def test_scalar_soft_threshold(self):
        inst = ProblemInstance(
            f_matrix=np.array([[1.0]]), x0=np.zeros(1), w=np.zeros(1),
            y=np.array([2.0]), delta0=0.0,
        )
        res = coordinate_descent_solve(inst, Penalty(0.5, 0.0), tol=1e-12)
        assert res.converged
        assert res.x[0] == pytest.approx(1.5, abs=1e-10)

    def test_null_solution_condition(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 20), 0.3, 0.01, seed=2)
        lam1 = float(np.max(np.abs(inst.f_matrix.T @ inst.y))) + 1e-6
        res = coordinate_descent_solve(inst, Penalty(lam1, 0.0), tol=1e-12)
        np.testing.assert_array_equal(res.x, np.zeros(20))

    @pytest.mark.parametrize("pen", [Penalty(0.1, 0.1), Penalty(0.1, 0.0), Penalty(0.0, 0.3)])
    def test_objective_matches_message_passing(self, pen):
        from rivamp.spectral import marchenko_pastur_law

        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 10), 0.3, 0.01, seed=3)
        cd = coordinate_descent_solve(inst, pen, tol=1e-14)
        params = SEParams(prior=Prior(0.3), penalty=pen, delta0=0.01, law=marchenko_pastur_law(2.0))
        report = solve_se(params)
        cfg = config_from_fixed_point(report, params, max_iters=3000, tol=1e-28)
        est, trace, _ = run_vamp(inst, cfg, seed=3)
        assert trace.converged
        assert abs(objective(inst, pen, cd.x) - objective(inst, pen, est)) <= 1e-8
        assert np.linalg.norm(cd.x - est) / np.sqrt(10) <= 1e-6

    def test_max_passes_flag(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 0.5, 60), 0.3, 0.01, seed=4)
        res = coordinate_descent_solve(inst, Penalty(1e-4, 0.0), tol=1e-14, max_passes=2)
        assert not res.converged
        assert res.passes == 2

    def test_mean_loss_scaling(self):
        # Per-sample scaling with weights lam/M reproduces the unit-scale run.
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 15), 0.3, 0.01, seed=5)
        m = inst.f_matrix.shape[0]
        a = coordinate_descent_solve(inst, Penalty(0.2, 0.1), tol=1e-13)
        b = coordinate_descent_solve(
            inst, Penalty(0.2 / m, 0.1 / m), tol=1e-13, loss_scaling="mean"
        )
        np.testing.assert_allclose(a.x, b.x, atol=1e-9)

    def test_gap_is_positive_off_optimum(self):
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 2.0, 15), 0.3, 0.01, seed=6)
        res = coordinate_descent_solve(inst, Penalty(0.1, 0.2), tol=1e-12)
        assert res.gap >= 0.0

    def test_warm_start_reaches_same_solution(self):
        inst = generate_instance(MatrixEnsemble("uniform-singular", 1.0, 48), 0.3, 0.05, seed=7)
        pen = Penalty(1e-3, 0.0)
        cold = coordinate_descent_solve(inst, pen, tol=1e-12, max_passes=300_000)
        warm = coordinate_descent_solve(
            inst, pen, tol=1e-12, max_passes=300_000, warm_start="ridge"
        )
        assert cold.converged and warm.converged
        np.testing.assert_allclose(warm.x, cold.x, atol=1e-8)
        assert warm.passes <= cold.passes


class TestEmpiricalMse:
    def test_exact_recovery(self):
        x = np.linspace(-1, 1, 9)
        assert empirical_mse(x, x) == 0.0

    def test_null_estimate(self):
        # Tiny aspect ratio keeps the matrix small; only x0 matters here.
        inst = generate_instance(MatrixEnsemble("gaussian-iid", 0.001, 20_000), 0.3, 0.01, seed=7)
        assert empirical_mse(np.zeros(20_000), inst.x0) == pytest.approx(0.3, abs=0.02)

    def test_matches_loop_free_reference(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=100), rng.normal(size=100)
        ref = sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / 100
        assert empirical_mse(a, b) == pytest.approx(ref, abs=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            empirical_mse(np.zeros(3), np.zeros(4))


class TestSweepLambda:
    def test_large_l1_reaches_prior_second_moment(self):
        ens = MatrixEnsemble("row-orthogonal", 2.0, 80)
        sweep = sweep_lambda(ens, 0.3, 0.01, [8.0], n_realizations=30, base_seed=0)
        assert sweep.predicted_mse[0] == pytest.approx(0.3, rel=1e-3)
        assert sweep.empirical_mse_mean[0] == pytest.approx(0.3, rel=0.2)

    def test_near_noiseless_recovery(self):
        ens = MatrixEnsemble("row-orthogonal", 2.0, 80)
        sweep = sweep_lambda(ens, 0.3, 0.0, [1e-6], n_realizations=10, base_seed=1)
        assert sweep.predicted_mse[0] <= 1e-4
        assert sweep.empirical_mse_mean[0] <= 1e-4

    def test_bitwise_reproducible(self):
        ens = MatrixEnsemble("gaussian-iid", 2.0, 40)
        a = sweep_lambda(ens, 0.3, 0.01, [0.05, 0.2], n_realizations=8, base_seed=3)
        b = sweep_lambda(ens, 0.3, 0.01, [0.05, 0.2], n_realizations=8, base_seed=3)
        np.testing.assert_array_equal(a.empirical_mse_mean, b.empirical_mse_mean)
        np.testing.assert_array_equal(a.seeds, b.seeds)

    def test_paired_ensembles_one_call(self):
        pair = sweep_lambda(
            [MatrixEnsemble("gaussian-iid", 2.0, 40), MatrixEnsemble("row-orthogonal", 2.0, 40)],
            0.3, 0.01, [0.1], n_realizations=6, base_seed=4,
        )
        assert [s.label for s in pair] == ["gaussian-iid", "row-orthogonal"]
        assert pair[0].predicted_mse[0] != pair[1].predicted_mse[0]

    def test_stderr_scaling(self):
        ens = MatrixEnsemble("row-orthogonal", 2.0, 100)
        small = sweep_lambda(ens, 0.3, 0.01, [0.1], n_realizations=100, base_seed=5)
        large = sweep_lambda(ens, 0.3, 0.01, [0.1], n_realizations=200, base_seed=1005)
        ratio = small.empirical_mse_stderr[0] / large.empirical_mse_stderr[0]
        assert 1.2 <= ratio <= 1.7

    def test_parallel_jobs_match_serial(self):
        ens = MatrixEnsemble("gaussian-iid", 2.0, 30)
        a = sweep_lambda(ens, 0.3, 0.01, [0.1, 0.3], n_realizations=6, base_seed=6, jobs=1)
        b = sweep_lambda(ens, 0.3, 0.01, [0.1, 0.3], n_realizations=6, base_seed=6, jobs=2)
        np.testing.assert_array_equal(a.empirical_mse_mean, b.empirical_mse_mean)

    def test_round_trip(self):
        ens = MatrixEnsemble("gaussian-iid", 2.0, 30)
        sweep = sweep_lambda(ens, 0.3, 0.01, [0.1], n_realizations=5, base_seed=7)
        back = SweepResult.from_dict(sweep.to_dict())
        np.testing.assert_array_equal(back.empirical_mse_mean, sweep.empirical_mse_mean)
        np.testing.assert_array_equal(back.seeds, sweep.seeds)

    def test_empty_grid_rejected(self):
        with pytest.raises(ParameterError):
            sweep_lambda(MatrixEnsemble("gaussian-iid", 2.0, 30), 0.3, 0.01, [], 5, 0)

    def test_prediction_never_reads_instances(self):
        # Same predicted curve regardless of realization count or seeds, and
        # identical to a direct scalar solve.
        from rivamp.spectral import law_for_ensemble
        ens = MatrixEnsemble("row-orthogonal", 2.0, 30)
        a = sweep_lambda(ens, 0.3, 0.01, [0.1, 0.4], n_realizations=2, base_seed=1)
        b = sweep_lambda(ens, 0.3, 0.01, [0.1, 0.4], n_realizations=6, base_seed=999)
        np.testing.assert_array_equal(a.predicted_mse, b.predicted_mse)
        direct = solve_se(
            SEParams(prior=Prior(0.3), penalty=Penalty(0.1, 0.0), delta0=0.01,
                     law=law_for_ensemble(ens))
        ).E
        assert a.predicted_mse[0] == direct


class TestSweepAlpha:
    def test_prediction_peaks_near_interpolation(self):
        grid = np.linspace(0.5, 2.0, 7)
        sweeps = sweep_alpha(
            n=48, alpha_grid=grid, lambda1_values=[1e-4, 1e-1], rho=0.3, delta0=0.05,
            n_realizations=4, base_seed=8,
        )
        small, large = sweeps
        peak_alpha = grid[np.argmax(small.predicted_mse)]
        assert abs(peak_alpha - 1.0) <= 0.26
        # Strong regularization removes the interior peak: the small-l1 curve
        # has an interior local maximum, the large-l1 curve has none.
        def interior_peaks(curve):
            return [
                curve[i]
                for i in range(1, len(curve) - 1)
                if curve[i] > curve[i - 1] and curve[i] > curve[i + 1]
            ]

        assert interior_peaks(small.predicted_mse)
        assert not interior_peaks(large.predicted_mse)

    def test_shifted_family_moves_peak(self):
        grid = np.linspace(1.0, 2.0, 5)
        sweeps = sweep_alpha(
            n=32, alpha_grid=grid, lambda1_values=[1e-4], rho=0.3, delta0=0.05,
            n_realizations=2, base_seed=9, shift=1.5,
        )
        peak_alpha = grid[np.argmax(sweeps[0].predicted_mse)]
        assert abs(peak_alpha - 1.5) <= 0.26


class TestConvergenceStudy:
    def test_matrix_classification(self):
        cells = convergence_study([0.1, 0.5], 0.1, [0.1], 100, 0.3, 0.01, seed=0)
        assert cells[(0.1, 0.1)][0].diverged
        assert cells[(0.5, 0.1)][0].converged
