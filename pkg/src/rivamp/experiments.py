"""Finite-size experiments: instances, a coordinate-descent baseline, and
prediction-versus-simulation sweeps."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ParameterError
from .proximal import Penalty, QuadraticLossOracle
from .spectral import MatrixEnsemble, law_for_ensemble, sample_matrix, uniform_singular_law
from .state_evolution import Prior, SEParams, solve_se
from .vamp import config_from_fixed_point, run_vamp

try:
    from numba import njit
except ImportError:  # pragma: no cover - the accelerator is optional
    njit = None


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One sampled realization y = F x0 + w."""

    f_matrix: np.ndarray
    x0: np.ndarray
    w: np.ndarray
    y: np.ndarray
    delta0: float
    seed: int | None = None

    @cached_property
    def loss_oracle(self) -> QuadraticLossOracle:
        return QuadraticLossOracle(self.f_matrix, self.y)

    @property
    def shape(self) -> tuple[int, int]:
        return self.f_matrix.shape


def generate_instance(
    ensemble: MatrixEnsemble, rho: float, delta0: float, seed: int
) -> ProblemInstance:
    """Sample (F, x0, w) and form y; deterministic for a fixed seed."""
    if not 0.0 <= rho <= 1.0:
        raise ParameterError("rho must lie in [0, 1]")
    if delta0 < 0:
        raise ParameterError("delta0 must be nonnegative")
    f = sample_matrix(ensemble, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    n, m = ensemble.n, f.shape[0]
    x0 = np.where(rng.random(n) < rho, rng.standard_normal(n), 0.0)
    w = np.sqrt(delta0) * rng.standard_normal(m)
    y = f @ x0 + w
    return ProblemInstance(f_matrix=f, x0=x0, w=w, y=y, delta0=delta0, seed=seed)


def empirical_mse(estimate: np.ndarray, x0: np.ndarray) -> float:
    """||x0 - estimate||^2 / N."""
    estimate = np.asarray(estimate, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if estimate.shape != x0.shape:
        raise ParameterError("estimate and x0 must have the same length")
    diff = x0 - estimate
    return float(diff @ diff) / x0.shape[0]


# -- coordinate descent ----------------------------------------------------


def _cd_passes(gram, x, grad, lam1, lam2, n_passes):
    """Cyclic coordinate sweeps on the gram system; grad tracks F^T (y - F x)."""
    n = x.shape[0]
    for _ in range(n_passes):
        for j in range(n):
            gjj = gram[j, j]
            if gjj == 0.0 and lam2 == 0.0:
                continue
            rho_j = grad[j] + gjj * x[j]
            if rho_j > lam1:
                new = (rho_j - lam1) / (gjj + lam2)
            elif rho_j < -lam1:
                new = (rho_j + lam1) / (gjj + lam2)
            else:
                new = 0.0
            delta = new - x[j]
            if delta != 0.0:
                row = gram[j]  # gram is symmetric; rows are contiguous
                for i in range(n):
                    grad[i] -= row[i] * delta
                x[j] = new
    return x, grad


if njit is not None:
    _cd_passes = njit(cache=True)(_cd_passes)


def _duality_gap(instance, penalty, x):
    """Objective-dual gap; nonnegative and zero exactly at the optimum."""
    lam1, lam2 = penalty.lambda1, penalty.lambda2
    r = instance.y - instance.f_matrix @ x
    r_norm2 = float(r @ r)
    if lam1 > 0:
        # Dual-feasible scaling of the residual through the augmented design
        # [F; sqrt(lam2) Id], whose correlation with it is F^T r - lam2 x.
        dual_norm = float(np.max(np.abs(instance.f_matrix.T @ r - lam2 * x)))
        const = min(1.0, lam1 / dual_norm) if dual_norm > 0 else 1.0
        gap = 0.5 * r_norm2 * (1.0 + const * const)
        gap += lam1 * float(np.sum(np.abs(x))) - const * float(r @ instance.y)
        gap += 0.5 * lam2 * float(x @ x) * (1.0 + const * const)
        return gap
    if lam2 > 0:
        # Ridge-only dual at nu = r (always feasible).
        ftr = instance.f_matrix.T @ r
        return (
            r_norm2
            - float(instance.y @ r)
            + 0.5 * lam2 * float(x @ x)
            + 0.5 * float(ftr @ ftr) / lam2
        )
    # Unpenalized least squares: first-order stationarity.
    return float(np.max(np.abs(instance.f_matrix.T @ r)))


@dataclass(frozen=True)
class CDResult:
    x: np.ndarray
    converged: bool
    passes: int
    gap: float


def coordinate_descent_solve(
    instance: ProblemInstance,
    penalty: Penalty,
    tol: float = 1e-9,
    max_passes: int = 100_000,
    check_every: int = 10,
    loss_scaling: str = "unit",
    warm_start: str | None = None,
) -> CDResult:
    """Cyclic coordinate descent on 0.5 ||y - F x||^2 + penalty, gap-controlled.

    ``loss_scaling='mean'`` instead minimizes the per-sample objective
    (1/(2M)) ||y - F x||^2 + penalty, the convention of several packaged
    solvers; the penalty weights are interpreted on whichever scale is chosen.
    ``warm_start='ridge'`` initializes at the cached-SVD ridge solution with
    parameter lambda1 + lambda2, which cuts the pass count substantially on
    near-singular designs; the convex objective makes the result init-free.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if loss_scaling not in ("unit", "mean"):
        raise ParameterError("loss_scaling must be 'unit' or 'mean'")
    if warm_start not in (None, "ridge"):
        raise ParameterError("warm_start must be None or 'ridge'")
    lam1, lam2 = penalty.lambda1, penalty.lambda2
    if loss_scaling == "mean":
        m = instance.f_matrix.shape[0]
        lam1, lam2 = lam1 * m, lam2 * m
    eff_penalty = Penalty(lam1, lam2)

    gram = instance.f_matrix.T @ instance.f_matrix
    fty = instance.f_matrix.T @ instance.y
    if warm_start == "ridge":
        from .proximal import prox_quadratic_loss

        a2 = max(lam1 + lam2, 1e-10)
        x = prox_quadratic_loss(instance.loss_oracle, a2, np.zeros(instance.x0.shape[0]))
        grad = fty - gram @ x
    else:
        x = np.zeros(instance.x0.shape[0])
        grad = fty

    passes = 0
    gap = _duality_gap(instance, eff_penalty, x)
    while gap > tol and passes < max_passes:
        chunk = min(check_every, max_passes - passes)
        x, grad = _cd_passes(gram, x, grad, lam1, lam2, chunk)
        passes += chunk
        gap = _duality_gap(instance, eff_penalty, x)
    return CDResult(x=x, converged=gap <= tol, passes=passes, gap=gap)


# -- sweeps ----------------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    """Predicted curve with empirical mean and standard error per grid point.

    ``n_realizations`` is the per-point baseline; when a stderr precision
    target tops up noisy points, ``realization_counts`` records how many of
    the pre-drawn ``seeds`` each point actually consumed.
    """

    grid: np.ndarray
    predicted_mse: np.ndarray
    empirical_mse_mean: np.ndarray
    empirical_mse_stderr: np.ndarray
    n_realizations: int
    seeds: np.ndarray
    label: str = ""
    n_nonconverged: np.ndarray = field(default=None)
    realization_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        k = len(self.grid)
        if not (
            len(self.predicted_mse) == len(self.empirical_mse_mean)
            == len(self.empirical_mse_stderr) == k
        ):
            raise ParameterError("all sweep columns must share the grid length")
        if np.any(self.empirical_mse_stderr < 0):
            raise ParameterError("standard errors must be nonnegative")
        if self.n_nonconverged is None:
            object.__setattr__(self, "n_nonconverged", np.zeros(k, dtype=int))
        if self.realization_counts is None:
            object.__setattr__(
                self, "realization_counts", np.full(k, self.n_realizations, dtype=int)
            )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "grid": list(map(float, self.grid)),
            "predicted_mse": list(map(float, self.predicted_mse)),
            "empirical_mse_mean": list(map(float, self.empirical_mse_mean)),
            "empirical_mse_stderr": list(map(float, self.empirical_mse_stderr)),
            "n_realizations": int(self.n_realizations),
            "seeds": [list(map(int, row)) for row in self.seeds],
            "n_nonconverged": list(map(int, self.n_nonconverged)),
            "realization_counts": list(map(int, self.realization_counts)),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepResult":
        return cls(
            grid=np.array(data["grid"], dtype=float),
            predicted_mse=np.array(data["predicted_mse"], dtype=float),
            empirical_mse_mean=np.array(data["empirical_mse_mean"], dtype=float),
            empirical_mse_stderr=np.array(data["empirical_mse_stderr"], dtype=float),
            n_realizations=int(data["n_realizations"]),
            seeds=np.array(data["seeds"], dtype=np.int64),
            label=data.get("label", ""),
            n_nonconverged=np.array(data["n_nonconverged"], dtype=int),
            realization_counts=np.array(data["realization_counts"], dtype=int),
        )


def _draw_seeds(base_seed: int, shape: tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(base_seed))
    return rng.integers(0, 2**62, size=shape, dtype=np.int64)


def _solve_one(task):
    ensemble, rho, delta0, penalty, seed, cd_tol, cd_max_passes, warm_start = task
    instance = generate_instance(ensemble, rho, delta0, int(seed))
    result = coordinate_descent_solve(
        instance, penalty, tol=cd_tol, max_passes=cd_max_passes, warm_start=warm_start
    )
    return empirical_mse(result.x, instance.x0), result.converged


def _run_realizations(tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_solve_one, tasks, chunksize=4))
    return [_solve_one(t) for t in tasks]


def _empirical_point(
    ensemble, rho, delta0, penalty, seed_row, n_base, stderr_target, cd_tol,
    cd_max_passes, warm_start, jobs,
):
    """Mean and stderr over realizations, topping up in n_base batches until
    the stderr precision gate (fraction of the mean) is met or seeds run out."""
    mses = []
    nonconv = 0
    used = 0
    while True:
        batch = seed_row[used : used + n_base]
        tasks = [
            (ensemble, rho, delta0, penalty, s, cd_tol, cd_max_passes, warm_start)
            for s in batch
        ]
        outcomes = _run_realizations(tasks, jobs)
        mses.extend(o[0] for o in outcomes)
        nonconv += sum(1 for o in outcomes if not o[1])
        used += len(batch)
        arr = np.asarray(mses)
        mean = arr.mean()
        stderr = arr.std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else 0.0
        if (
            stderr_target is None
            or used >= len(seed_row)
            or stderr <= stderr_target * abs(mean)
        ):
            return mean, stderr, used, nonconv


def sweep_lambda(
    ensembles,
    rho: float,
    delta0: float,
    lambda_grid,
    n_realizations: int,
    base_seed: int,
    lambda2: float = 0.0,
    cd_tol: float = 1e-9,
    cd_max_passes: int = 100_000,
    jobs: int = 1,
    stderr_target: float | None = None,
    max_realizations: int | None = None,
    cd_warm_start: str | None = None,
):
    """Predicted and simulated MSE over an l1 grid, per ensemble.

    Accepts a single ensemble or a sequence; returns a matching SweepResult
    or list of SweepResults.  The prediction never reads any sampled
    instance.  With ``stderr_target`` set, points whose standard error
    exceeds that fraction of the mean receive further batches of
    ``n_realizations`` up to ``max_realizations`` (default 5x).
    """
    single = isinstance(ensembles, MatrixEnsemble)
    ens_list = [ensembles] if single else list(ensembles)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if lambda_grid.size == 0:
        raise ParameterError("lambda grid must be nonempty")
    cap = max_realizations or (5 * n_realizations if stderr_target else n_realizations)
    prior = Prior(rho)
    results = []
    seeds = _draw_seeds(base_seed, (len(ens_list), len(lambda_grid), cap))
    for i, ens in enumerate(ens_list):
        law = law_for_ensemble(ens)
        k = len(lambda_grid)
        predicted = np.empty(k)
        emp_mean = np.empty(k)
        emp_stderr = np.empty(k)
        counts = np.zeros(k, dtype=int)
        nonconv = np.zeros(k, dtype=int)
        for j, lam1 in enumerate(lambda_grid):
            penalty = Penalty(lam1, lambda2)
            predicted[j] = solve_se(
                SEParams(prior=prior, penalty=penalty, delta0=delta0, law=law)
            ).E
            emp_mean[j], emp_stderr[j], counts[j], nonconv[j] = _empirical_point(
                ens, rho, delta0, penalty, seeds[i, j], n_realizations, stderr_target,
                cd_tol, cd_max_passes, cd_warm_start, jobs,
            )
        results.append(
            SweepResult(
                grid=lambda_grid,
                predicted_mse=predicted,
                empirical_mse_mean=emp_mean,
                empirical_mse_stderr=emp_stderr,
                n_realizations=n_realizations,
                seeds=seeds[i],
                label=ens.kind,
                n_nonconverged=nonconv,
                realization_counts=counts,
            )
        )
    return results[0] if single else results


def sweep_alpha(
    n: int,
    alpha_grid,
    lambda1_values,
    rho: float,
    delta0: float,
    n_realizations: int,
    base_seed: int,
    shift: float = 1.0,
    lambda2: float = 0.0,
    cd_tol: float = 1e-9,
    cd_max_passes: int = 100_000,
    jobs: int = 1,
    stderr_target: float | None = None,
    max_realizations: int | None = None,
    cd_warm_start: str | None = None,
) -> list[SweepResult]:
    """Error-versus-sampling-ratio curves for the uniform-singular family.

    One SweepResult per l1 value, each over the alpha grid.
    """
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if np.any(alpha_grid <= 0):
        raise ParameterError("alpha grid must be positive")
    lambda1_values = list(lambda1_values)
    cap = max_realizations or (5 * n_realizations if stderr_target else n_realizations)
    prior = Prior(rho)
    seeds = _draw_seeds(base_seed, (len(lambda1_values), len(alpha_grid), cap))
    results = []
    for i, lam1 in enumerate(lambda1_values):
        penalty = Penalty(lam1, lambda2)
        k = len(alpha_grid)
        predicted = np.empty(k)
        emp_mean = np.empty(k)
        emp_stderr = np.empty(k)
        counts = np.zeros(k, dtype=int)
        nonconv = np.zeros(k, dtype=int)
        for j, alpha in enumerate(alpha_grid):
            ens = MatrixEnsemble("uniform-singular", float(alpha), n, shift=shift)
            law = uniform_singular_law(float(alpha), shift)
            predicted[j] = solve_se(
                SEParams(prior=prior, penalty=penalty, delta0=delta0, law=law)
            ).E
            emp_mean[j], emp_stderr[j], counts[j], nonconv[j] = _empirical_point(
                ens, rho, delta0, penalty, seeds[i, j], n_realizations, stderr_target,
                cd_tol, cd_max_passes, cd_warm_start, jobs,
            )
        results.append(
            SweepResult(
                grid=alpha_grid,
                predicted_mse=predicted,
                empirical_mse_mean=emp_mean,
                empirical_mse_stderr=emp_stderr,
                n_realizations=n_realizations,
                seeds=seeds[i],
                label=f"lambda1={lam1:g}",
                n_nonconverged=nonconv,
                realization_counts=counts,
            )
        )
    return results


def convergence_study(
    alpha_values,
    lambda1: float,
    lambda2_values,
    n: int,
    rho: float,
    delta0: float,
    seed: int,
    max_iters: int = 500,
    tol: float = 1e-8,
):
    """Message-passing trace per (alpha, lambda2) cell on sampled instances.

    Returns {(alpha, lambda2): (trace, checks)}; divergence is data, not an
    error.
    """
    prior = Prior(rho)
    out = {}
    for lam2 in lambda2_values:
        penalty = Penalty(lambda1, lam2)
        for alpha in alpha_values:
            ens = MatrixEnsemble("gaussian-iid", float(alpha), n)
            law = law_for_ensemble(ens)
            report = solve_se(SEParams(prior=prior, penalty=penalty, delta0=delta0, law=law))
            config = config_from_fixed_point(
                report,
                SEParams(prior=prior, penalty=penalty, delta0=delta0, law=law),
                max_iters=max_iters,
                tol=tol,
            )
            instance = generate_instance(ens, rho, delta0, seed)
            _, trace, checks = run_vamp(instance, config, seed)
            out[(float(alpha), float(lam2))] = (trace, checks)
    return out
