"""Fixed point of the (E, V) saddle-point system driven by the R-transform.

This is the compact rewriting of the state-evolution fixed point: the
spectrum enters only through R and R', and the prior side reuses the same
moment machinery with threshold R(-V) and effective noise variance tau1~.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DiagnosticError, ParameterError, RangeError
from .proximal import prox_vector
from .spectral import r_transform, r_transform_derivative
from .state_evolution import FixedPointReport, SEParams, e1_moments, solve_se


@dataclass(frozen=True)
class ReplicaState:
    """Mean squared error and variance pair tracked by the compact system."""

    E: float
    V: float

    def __post_init__(self):
        if self.E < 0 or self.V < 0:
            raise ParameterError("E and V must be nonnegative")


def tau_effective(state: ReplicaState, delta0: float, law) -> float:
    """Variance of the Gaussian argument of the compact equations.

    tau1~ = [(E - delta0 V) R'(-V) + delta0 R(-V)] / R(-V)^2.
    """
    r = r_transform(law, -state.V)
    rp = r_transform_derivative(law, -state.V)
    return ((state.E - delta0 * state.V) * rp + delta0 * r) / (r * r)


def replica_rhs(state: ReplicaState, params: SEParams) -> ReplicaState:
    """One evaluation of the right-hand side of the (E, V) system."""
    r = r_transform(params.law, -state.V)
    tau = max(tau_effective(state, params.delta0, params.law), 0.0)
    alpha1, e1 = e1_moments(r, tau, params.prior, params.penalty, params.moment_backend)
    return ReplicaState(E=e1, V=alpha1 / r)


def solve_replica(params: SEParams) -> FixedPointReport:
    """Damped fixed-point iteration on (E, V) to the same tolerance contract
    as the state-evolution solver.

    When a candidate V leaves the attainable R-transform domain (possible for
    spectra whose Stieltjes transform has a finite supremum), the step
    backtracks halfway toward the previous iterate instead of failing.
    """
    e = params.prior.second_moment + params.delta0
    v = 0.5 * e
    for _ in range(60):
        try:
            r_transform(params.law, -v)
            break
        except RangeError:
            v *= 0.5
    state = ReplicaState(E=e, V=v)

    d = params.damping
    residual = math.inf
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iters + 1):
        try:
            rhs = replica_rhs(state, params)
        except RangeError:
            state = ReplicaState(E=state.E, V=_last_valid_v(params, state.V))
            rhs = replica_rhs(state, params)
        new = ReplicaState(
            E=d * rhs.E + (1.0 - d) * state.E,
            V=max(d * rhs.V + (1.0 - d) * state.V, 1e-300),
        )
        residual = max(abs(new.E - state.E), abs(new.V - state.V)) / (1.0 + abs(new.E))
        state = new
        if residual <= params.tol:
            converged = True
            break

    a1 = r_transform(params.law, -state.V)
    a2 = 1.0 / state.V - a1
    tau1 = max(tau_effective(state, params.delta0, params.law), 0.0)
    alpha1, e1 = e1_moments(a1, tau1, params.prior, params.penalty, params.moment_backend)
    if alpha1 < 1.0:
        tau2 = max((e1 - alpha1 * alpha1 * tau1) / (1.0 - alpha1) ** 2, 0.0)
    else:
        tau2 = 0.0
    return FixedPointReport(
        E=state.E,
        V=state.V,
        a1=a1,
        a2=a2,
        tau1=tau1,
        tau2=tau2,
        converged=converged,
        residual=residual,
        iterations=iterations,
    )


def _last_valid_v(params: SEParams, v: float) -> float:
    """Largest halving of v whose R-transform argument is attainable."""
    for _ in range(200):
        v *= 0.5
        try:
            r_transform(params.law, -v)
            return v
        except RangeError:
            continue
    raise DiagnosticError("could not find an attainable variance for the R-transform")


def check_se_replica_equivalence(params: SEParams) -> float:
    """Relative gap between the two fixed points; both must converge."""
    se_report = solve_se(params)
    rep_report = solve_replica(params)
    if not se_report.converged or not rep_report.converged:
        raise DiagnosticError(
            f"equivalence check needs both solvers converged "
            f"(state evolution: {se_report.converged}, compact system: {rep_report.converged})"
        )
    return max(
        abs(se_report.E - rep_report.E) / (1.0 + se_report.E),
        abs(se_report.V - rep_report.V) / (1.0 + se_report.V),
    )


class EstimatorLawSampler:
    """Sampler for the predicted elementwise law of the penalized estimator.

    Draws prox_{f/R(-V)}(x0 + sqrt(tau1~) z) with z standard normal and x0
    from the spike-and-slab prior.
    """

    def __init__(self, params: SEParams, fixed_point: FixedPointReport):
        if not fixed_point.converged:
            raise DiagnosticError("the estimator law is defined at a converged fixed point")
        self._params = params
        state = ReplicaState(E=fixed_point.E, V=fixed_point.V)
        self.a1 = r_transform(params.law, -fixed_point.V)
        self.tau1 = max(tau_effective(state, params.delta0, params.law), 0.0)

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        rho = self._params.prior.rho
        x0 = np.where(rng.random(n) < rho, rng.standard_normal(n), 0.0)
        u = x0 + np.sqrt(self.tau1) * rng.standard_normal(n)
        return prox_vector(self._params.penalty, 1.0 / self.a1, u)


def predicted_estimator_law(params: SEParams, fixed_point: FixedPointReport) -> EstimatorLawSampler:
    """Build the elementwise-law sampler from a converged fixed point."""
    return EstimatorLawSampler(params, fixed_point)
