"""Two-block proximal message passing on sampled instances.

The oracle variant freezes the step parameters (A1, A2, V) at the scalar
fixed point; the adaptive variant re-estimates them each sweep from the
iterates. A run records the squared distance between successive messages,
which is the quantity whose geometric decay (or blow-up) classifies
convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvariantError, ParameterError
from .proximal import Penalty, jacobian_trace_average, prox_quadratic_loss, prox_vector
from .spectral import stieltjes
from .state_evolution import FixedPointReport, SEParams

A_FLOOR = 1e-9


@dataclass(frozen=True)
class VampConfig:
    """Frozen step parameters and run controls.

    a1 + a2 = 1/v is required exactly (to 1e-10); it is what makes the fixed
    point of the iteration solve the penalized least-squares problem.
    """

    a1: float
    a2: float
    v: float
    penalty: Penalty
    mode: str = "oracle"
    max_iters: int = 1000
    tol: float = 1e-13
    b1_variance: float = 1.0

    def __post_init__(self):
        if min(self.a1, self.a2, self.v) <= 0:
            raise ParameterError("a1, a2 and v must be positive")
        if abs(self.a1 + self.a2 - 1.0 / self.v) > 1e-10 * max(1.0, 1.0 / self.v):
            raise InvariantError("a1 + a2 = 1/v violated beyond 1e-10")
        if self.mode not in ("oracle", "adaptive"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.max_iters < 1 or self.tol <= 0:
            raise ParameterError("max_iters must be >= 1 and tol positive")


def config_from_fixed_point(
    report: FixedPointReport,
    params: SEParams,
    mode: str = "oracle",
    max_iters: int = 1000,
    tol: float = 1e-13,
) -> VampConfig:
    """Build a config from a converged scalar fixed point.

    Checks the self-consistency v = S(-a2) of the supplied fixed point.  The
    initial message variance is the uninformative scale tau1(init) =
    second_moment + delta0; starting orders of magnitude smaller would place
    the message inside the solution's basin even on instances where the
    iteration is globally unstable, hiding the divergent regimes.
    """
    v = 1.0 / (report.a1 + report.a2)
    if abs(v - stieltjes(params.law, -report.a2)) > 1e-8:
        raise InvariantError("fixed point fails v = S(-a2) beyond 1e-8")
    tau10 = params.prior.second_moment + params.delta0
    return VampConfig(
        a1=report.a1,
        a2=report.a2,
        v=v,
        penalty=params.penalty,
        mode=mode,
        max_iters=max_iters,
        tol=tol,
        b1_variance=tau10,
    )


@dataclass(frozen=True)
class VampState:
    """Messages and estimates of one sweep; a1k tracks the adaptive threshold."""

    b1: np.ndarray
    b2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    k: int = 0
    a1k: float = 0.0
    clip_events: int = 0


@dataclass
class ConvergenceTrace:
    """Per-iteration message distance d_k = ||B2_{k+1} - B2_k||^2 / N and MSE."""

    d: np.ndarray
    mse: np.ndarray
    converged: bool
    diverged: bool
    iterations: int
    clip_events: int = 0

    def to_rows(self):
        return [(k, float(dk), float(mk)) for k, (dk, mk) in enumerate(zip(self.d, self.mse))]


@dataclass(frozen=True)
class FixedPointChecks:
    """Optimality and contraction diagnostics of a finished run."""

    kkt_residual: float
    contraction_ratio: float


def vamp_init(n: int, config: VampConfig, seed: int) -> VampState:
    """Isotropic initial message with empirical variance pinned to the config scale."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    rng = np.random.default_rng(seed)
    b1 = rng.standard_normal(n)
    norm = np.linalg.norm(b1)
    if norm > 0:
        b1 = b1 * np.sqrt(n * config.b1_variance) / norm
    zeros = np.zeros(n)
    return VampState(b1=b1, b2=zeros, x1=zeros, x2=zeros, k=0, a1k=config.a1)


def _check_finite(state: VampState, trace=None):
    for vec in (state.b1, state.b2, state.x1, state.x2):
        if not np.all(np.isfinite(vec)):
            raise DivergenceError("non-finite values in the iteration", trace)


def vamp_step_oracle(state: VampState, config: VampConfig, instance) -> VampState:
    """One sweep with frozen (A1, A2, V)."""
    a1, a2, v = config.a1, config.a2, config.v
    x1 = prox_vector(config.penalty, 1.0 / a1, state.b1 / a1)
    b2 = x1 / v - state.b1
    x2 = prox_quadratic_loss(instance.loss_oracle, a2, b2)
    b1 = x2 / v - b2
    new = VampState(b1=b1, b2=b2, x1=x1, x2=x2, k=state.k + 1, a1k=a1,
                    clip_events=state.clip_events)
    _check_finite(new)
    return new


def vamp_step_adaptive(state: VampState, config: VampConfig, instance) -> VampState:
    """One sweep re-estimating the variances from the data.

    Nonpositive 1/V - A readouts are clipped to a small floor and counted;
    the scheme has no other safeguard.
    """
    a1 = state.a1k if state.a1k > 0 else config.a1
    clips = state.clip_events
    x1 = prox_vector(config.penalty, 1.0 / a1, state.b1 / a1)
    v1 = jacobian_trace_average(config.penalty, 1.0 / a1, state.b1 / a1) / a1
    if v1 <= 0:
        v1 = A_FLOOR
        clips += 1
    a2 = 1.0 / v1 - a1
    if a2 <= 0:
        a2 = A_FLOOR
        clips += 1
    b2 = x1 / v1 - state.b1
    x2 = prox_quadratic_loss(instance.loss_oracle, a2, b2)
    v2 = instance.loss_oracle.inverse_trace_average(a2)
    a1_next = 1.0 / v2 - a2
    if a1_next <= 0:
        a1_next = A_FLOOR
        clips += 1
    b1 = x2 / v2 - b2
    new = VampState(b1=b1, b2=b2, x1=x1, x2=x2, k=state.k + 1, a1k=a1_next, clip_events=clips)
    _check_finite(new)
    return new


def optimality_residual(estimate: np.ndarray, instance, penalty: Penalty) -> float:
    """Largest violation of F^T (y - F x) in the penalty subdifferential.

    Active coordinates contribute |g - lam2 x - lam1 sign(x)|; zero
    coordinates contribute max(0, |g| - lam1).
    """
    x = np.asarray(estimate, dtype=float)
    g = instance.f_matrix.T @ (instance.y - instance.f_matrix @ x)
    active = x != 0.0
    res_active = np.abs(g - penalty.lambda2 * x - penalty.lambda1 * np.sign(x))
    res_zero = np.maximum(np.abs(g) - penalty.lambda1, 0.0)
    res = np.where(active, res_active, res_zero)
    return float(np.max(res))


def lipschitz_bound_o1(sigma1: float, beta1: float, a1: float, a2: float) -> float:
    """Upper bound on the Lipschitz constant of the penalty-side reflection.

    Cases: 0 < sigma1 < beta1 (beta1 may be infinite), 0 < sigma1 = beta1,
    and sigma1 = 0 with no smoothness information.
    """
    if not 0 <= sigma1 <= beta1:
        raise ParameterError("need 0 <= sigma1 <= beta1")
    if min(a1, a2) <= 0:
        raise ParameterError("a1 and a2 must be positive")
    if sigma1 == 0.0:
        return max(1.0, a1 / a2)
    if sigma1 == beta1:
        return math.sqrt((a2 * a2 - a1 * a1) / (a1 + sigma1) ** 2 + 1.0)
    smooth_term = 1.0 if math.isinf(beta1) else abs(beta1 - a2) / (a1 + beta1)
    return max(abs(a2 - sigma1) / (a1 + sigma1), smooth_term)


def lipschitz_bound_o2(lmin: float, lmax: float, a1: float, a2: float) -> float:
    """Upper bound on the Lipschitz constant of the data-side reflection."""
    if not 0 <= lmin <= lmax or lmax == 0:
        raise ParameterError("need 0 <= lmin <= lmax with lmax > 0")
    if min(a1, a2) <= 0:
        raise ParameterError("a1 and a2 must be positive")
    return max(abs(a1 - lmin) / (a2 + lmin), abs(lmax - a1) / (a2 + lmax))


def lambda2_threshold(lmin: float, lmax: float, sigma1_tilde: float, o1_cap: float) -> float:
    """Ridge weight beyond which the composed iteration is certified to contract.

    Any lam2 > o1_cap * (lmax - lmin) - sigma1_tilde - lmin forces
    L2 <= (lmax - lmin) / (sigma1_tilde + lam2 + lmin) < 1 / o1_cap.
    """
    if o1_cap <= 0:
        raise ParameterError("o1_cap must be positive")
    return o1_cap * (lmax - lmin) - sigma1_tilde - lmin


_DIVERGENCE_MAGNITUDE = 1e6
_DIVERGENCE_RUN = 20


def run_vamp(instance, config: VampConfig, seed: int):
    """Iterate until the message distance drops below tol or max_iters.

    Returns (estimate, ConvergenceTrace, FixedPointChecks).  Divergence
    (20 consecutive increases of d_k past 1e6, or non-finite values) sets the
    flag on the trace instead of raising.
    """
    n = instance.x0.shape[0]
    state = vamp_init(n, config, seed)
    step = vamp_step_oracle if config.mode == "oracle" else vamp_step_adaptive
    d_hist: list[float] = []
    mse_hist: list[float] = []
    prev_b2 = None
    converged = False
    diverged = False
    grow_run = 0
    estimate = state.x1
    try:
        for _ in range(config.max_iters):
            state = step(state, config, instance)
            estimate = state.x1
            mse_hist.append(float(np.sum((state.x1 - instance.x0) ** 2) / n))
            if prev_b2 is not None:
                d = float(np.sum((state.b2 - prev_b2) ** 2) / n)
                d_hist.append(d)
                if len(d_hist) >= 2 and d > d_hist[-2] and d > _DIVERGENCE_MAGNITUDE:
                    grow_run += 1
                    if grow_run >= _DIVERGENCE_RUN:
                        diverged = True
                        break
                else:
                    grow_run = 0
                if d <= config.tol:
                    converged = True
                    break
            prev_b2 = state.b2
    except DivergenceError:
        diverged = True
    trace = ConvergenceTrace(
        d=np.array(d_hist),
        mse=np.array(mse_hist),
        converged=converged,
        diverged=diverged,
        iterations=state.k,
        clip_events=state.clip_events,
    )
    checks = FixedPointChecks(
        kkt_residual=optimality_residual(estimate, instance, config.penalty),
        contraction_ratio=empirical_contraction_ratio(trace),
    )
    return estimate, trace, checks


def empirical_contraction_ratio(trace: ConvergenceTrace, window: int = 10) -> float:
    """Trailing per-distance contraction ratio of the message sequence.

    d_k is a squared distance, so the Lipschitz-comparable ratio is
    sqrt(d_{k+1} / d_k); the median over the last iterations above the
    floating-point floor is returned.
    """
    d = trace.d
    keep = d > 1e-28
    d = d[keep]
    if len(d) < 3:
        return math.nan
    ratios = np.sqrt(d[1:] / d[:-1])
    tail = ratios[-window:]
    return float(np.median(tail))
