"""State-evolution recursion for the two-block message-passing scheme.

The recursion tracks (A1, A2, V1, V2, alpha1, alpha2, tau1, tau2, E1, E2);
its fixed point gives the asymptotic mean squared error and variance of the
penalized estimator for a given prior, penalty, noise level and spectral law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .errors import CapabilityError, IterationError, ParameterError
from .proximal import Penalty, prox_vector
from .spectral import SpectralLaw, _composite_gauss_legendre, expect, stieltjes

A_CLIP = (1e-9, 1e9)

# Gauss-Hermite rule shared by the closed-form slab reduction and the
# quadrature backend.  Physicists' convention: E_{N(0,1)}[f] = sum w f(sqrt(2) t) / sqrt(pi).
_GH_T, _GH_W = special.roots_hermite(127)
_GH_X = np.sqrt(2.0) * _GH_T
_GH_WN = _GH_W / np.sqrt(np.pi)


@dataclass(frozen=True)
class Prior:
    """Spike-and-slab signal law (1 - rho) delta_0 + rho N(0, 1)."""

    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError("rho must lie in [0, 1]")

    @property
    def second_moment(self) -> float:
        return self.rho


@dataclass(frozen=True)
class MonteCarloBackend:
    """Sampling backend for the prior-side moments."""

    samples: int = 1_000_000
    seed: int = 0


MomentBackend = Union[str, MonteCarloBackend]


@dataclass(frozen=True)
class SEParams:
    """Problem description plus solver knobs for the scalar recursion."""

    prior: Prior
    penalty: Penalty
    delta0: float
    law: SpectralLaw
    damping: float = 0.5
    tol: float = 1e-12
    max_iters: int = 2000
    init_a1: float = 1.0
    init_tau1: float | None = None
    moment_backend: MomentBackend = "closed-form"

    def __post_init__(self):
        if self.delta0 < 0:
            raise ParameterError("delta0 must be nonnegative")
        if not 0.0 < self.damping <= 1.0:
            raise ParameterError("damping must lie in (0, 1]")
        if self.tol <= 0 or self.max_iters < 1:
            raise ParameterError("tol must be positive and max_iters at least 1")
        if self.init_a1 <= 0:
            raise ParameterError("init_a1 must be positive")
        if self.init_tau1 is None:
            object.__setattr__(self, "init_tau1", self.prior.second_moment + self.delta0)
        if self.init_tau1 <= 0:
            raise ParameterError("init_tau1 must be positive")
        if isinstance(self.moment_backend, str) and self.moment_backend not in (
            "closed-form",
            "quadrature",
        ):
            raise ParameterError(f"unknown moment backend {self.moment_backend!r}")


@dataclass(frozen=True)
class SEState:
    """One full iterate of the recursion; only (a1, tau1) feed the next step."""

    a1: float
    tau1: float
    a2: float = 0.0
    v1: float = 0.0
    v2: float = 0.0
    alpha1: float = 0.0
    alpha2: float = 0.0
    tau2: float = 0.0
    e1: float = 0.0
    e2: float = 0.0
    k: int = 0


@dataclass(frozen=True)
class FixedPointReport:
    """Converged quantities of either scalar fixed-point solver."""

    E: float
    V: float
    a1: float
    a2: float
    tau1: float
    tau2: float
    converged: bool
    residual: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "E": self.E,
            "V": self.V,
            "a1": self.a1,
            "a2": self.a2,
            "tau1": self.tau1,
            "tau2": self.tau2,
            "converged": self.converged,
            "residual": self.residual,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FixedPointReport":
        return cls(**data)


# -- prior-side moments ---------------------------------------------------


def _truncated_moments(t, tau):
    """(I0, I1, I2): moments of N(0, tau) restricted to (t, infinity)."""
    arg = t / np.sqrt(2.0 * tau)
    i0 = 0.5 * special.erfc(arg)
    density = np.sqrt(tau / (2.0 * np.pi)) * np.exp(-(t * t) / (2.0 * tau))
    i1 = density
    i2 = tau * i0 + t * density
    return i0, i1, i2


def _e1_given_x0(x0, theta, s, tau):
    """E_p[(s soft(x0 + p, theta) - x0)^2] for p ~ N(0, tau), vectorized in x0."""
    x0 = np.asarray(x0, dtype=float)
    if tau == 0.0:
        shrunk = s * np.sign(x0) * np.maximum(np.abs(x0) - theta, 0.0)
        return (shrunk - x0) ** 2
    t_hi = theta - x0
    t_lo = theta + x0
    c_hi = (s - 1.0) * x0 - s * theta
    c_lo = (s - 1.0) * x0 + s * theta
    i0h, i1h, i2h = _truncated_moments(t_hi, tau)
    i0l, i1l, i2l = _truncated_moments(t_lo, tau)
    dead = 0.5 * (special.erf(t_hi / np.sqrt(2.0 * tau)) + special.erf(t_lo / np.sqrt(2.0 * tau)))
    return (
        s * s * (i2h + i2l)
        + 2.0 * s * (c_hi * i1h - c_lo * i1l)
        + c_hi * c_hi * i0h
        + c_lo * c_lo * i0l
        + x0 * x0 * dead
    )


def _alpha1_closed_form(theta, s, tau, rho):
    if tau == 0.0:
        spike = 0.0 if theta > 0.0 else 1.0
    else:
        spike = special.erfc(theta / np.sqrt(2.0 * tau))
    slab = special.erfc(theta / np.sqrt(2.0 * (tau + 1.0)))
    return s * ((1.0 - rho) * spike + rho * slab)


def _layer_panels(centers, scale, width=10.0):
    """Gauss-Legendre nodes/weights on [-width, width], geometrically refined
    around each center down to the given feature scale."""
    edges = set(np.linspace(-width, width, 81))
    for c in centers:
        step = max(scale, 1e-12)
        pts = [c]
        while step < 2.0 * width:
            pts.extend((c - step, c + step))
            step *= 2.0
        edges.update(p for p in pts if -width < p < width)
    edges = np.array(sorted(edges))
    base_x, base_w = np.polynomial.legendre.leggauss(16)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    w = (half[:, None] * base_w[None, :]).ravel()
    return x, w


def _e1_closed_form(a1, tau1, prior, penalty):
    theta = penalty.lambda1 / a1
    s = 1.0 / (1.0 + penalty.lambda2 / a1)
    rho = prior.rho
    alpha1 = _alpha1_closed_form(theta, s, tau1, rho)
    if tau1 == 0.0:
        # Degenerate noise: the slab integrand has corners in x0, so the
        # Gauss-Hermite reduction does not apply; integrate the piecewise
        # quadratic against N(0, 1) exactly instead.
        i0, i1, i2 = _truncated_moments(np.float64(theta), 1.0)
        outer = (s - 1.0) ** 2 * i2 - 2.0 * (s - 1.0) * s * theta * i1 + (s * theta) ** 2 * i0
        slab = 2.0 * outer + (1.0 - 2.0 * i2)
        return alpha1, rho * float(slab)
    spike = float(_e1_given_x0(np.array([0.0]), theta, s, tau1)[0])
    if tau1 >= 0.2 or theta == 0.0:
        slab = float(np.dot(_GH_WN, _e1_given_x0(_GH_X, theta, s, tau1)))
    else:
        # Small tau1 puts an erf boundary layer of width sqrt(tau1) at
        # x0 = +-theta that Gauss-Hermite nodes cannot resolve.
        x, w = _layer_panels((-theta, theta), np.sqrt(tau1))
        density = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        slab = float(np.dot(w * density, _e1_given_x0(x, theta, s, tau1)))
    return alpha1, (1.0 - rho) * spike + rho * slab


def _gauss_expect(fn, variance, kinks=()):
    """E[fn(u)] for u ~ N(0, variance) by Gauss-Legendre panels.

    The integration range [-10 sigma, 10 sigma] is subdivided at density
    scale and split exactly at the supplied kink locations, so
    piecewise-smooth integrands (thresholded maps and their derivatives) are
    integrated to near machine accuracy.
    """
    if variance == 0.0:
        return float(fn(np.zeros(1))[0])
    sigma = np.sqrt(variance)
    width = 10.0 * sigma
    edges = set(np.linspace(-width, width, 81))
    for k in kinks:
        for val in (-abs(k), abs(k)):
            if -width < val < width:
                edges.add(val)
    edges = np.array(sorted(edges))
    base_x, base_w = np.polynomial.legendre.leggauss(16)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    u = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    w = (half[:, None] * base_w[None, :]).ravel()
    density = np.exp(-u * u / (2.0 * variance)) / (np.sqrt(2.0 * np.pi) * sigma)
    return float(np.dot(w * density, fn(u)))


def _e1_quadrature(a1, tau1, prior, penalty):
    # Independent route: conditioning on u = x0 + p reduces every term to a
    # one-dimensional Gaussian integral (E[x0 h(u)] = E[u h(u)] / (1 + tau)).
    gamma = 1.0 / a1
    rho = prior.rho
    kinks = (gamma * penalty.lambda1,) if penalty.lambda1 > 0 else ()

    def dprox(u):
        return np.where(np.abs(u) >= gamma * penalty.lambda1, 1.0, 0.0) / (
            1.0 + gamma * penalty.lambda2
        )

    def prox(u):
        return prox_vector(penalty, gamma, u)

    alpha1 = (1.0 - rho) * _gauss_expect(dprox, tau1, kinks) + rho * _gauss_expect(
        dprox, 1.0 + tau1, kinks
    )
    spike = _gauss_expect(lambda u: prox(u) ** 2, tau1, kinks)
    h2 = _gauss_expect(lambda u: prox(u) ** 2, 1.0 + tau1, kinks)
    uh = _gauss_expect(lambda u: u * prox(u), 1.0 + tau1, kinks)
    slab = h2 - 2.0 * uh / (1.0 + tau1) + 1.0
    return alpha1, (1.0 - rho) * spike + rho * slab


def _e1_monte_carlo(a1, tau1, prior, penalty, backend):
    rng = np.random.default_rng(backend.seed)
    n = backend.samples
    x0 = np.where(rng.random(n) < prior.rho, rng.standard_normal(n), 0.0)
    u = x0 + np.sqrt(tau1) * rng.standard_normal(n)
    gamma = 1.0 / a1
    outside = np.abs(u) >= gamma * penalty.lambda1
    alpha1 = float(np.mean(outside)) / (1.0 + gamma * penalty.lambda2)
    err = prox_vector(penalty, gamma, u) - x0
    return alpha1, float(np.mean(err * err))


def e1_moments(
    a1: float,
    tau1: float,
    prior: Prior,
    penalty: Penalty,
    backend: MomentBackend = "closed-form",
) -> tuple[float, float]:
    """Prior-side pair (alpha1, E1) at threshold a1 and input variance tau1.

    alpha1 = E[prox'_{f/A1}(x0 + P1)] and E1 = E[(prox_{f/A1}(x0 + P1) - x0)^2]
    with P1 ~ N(0, tau1).
    """
    if a1 <= 0:
        raise ParameterError("a1 must be positive")
    if tau1 < 0:
        raise ParameterError("tau1 must be nonnegative")
    if isinstance(backend, MonteCarloBackend):
        return _e1_monte_carlo(a1, tau1, prior, penalty, backend)
    if backend == "closed-form":
        return _e1_closed_form(a1, tau1, prior, penalty)
    if backend == "quadrature":
        return _e1_quadrature(a1, tau1, prior, penalty)
    raise CapabilityError(f"unknown moment backend {backend!r}")


def e2_moments(a2: float, tau2: float, delta0: float, law: SpectralLaw) -> tuple[float, float]:
    """Spectrum-side pair (alpha2, E2).

    alpha2 = E[A2 / (lambda + A2)] = A2 S(-A2) and
    E2 = E[(Delta0 lambda + tau2 A2^2) / (lambda + A2)^2].
    """
    if a2 <= 0:
        raise ParameterError("a2 must be positive")
    alpha2 = a2 * stieltjes(law, -a2)
    e2 = expect(law, lambda lam: (delta0 * lam + tau2 * a2 * a2) / (lam + a2) ** 2)
    return alpha2, e2


# -- the recursion --------------------------------------------------------


def _tau_update(num: float, one_minus_alpha: float) -> float:
    denom = one_minus_alpha * one_minus_alpha
    if denom == 0.0:
        # The numerator vanishes identically for the zero penalty; anything
        # else hitting this guard is a genuine division by zero.
        if abs(num) < 1e-15:
            return 0.0
        raise IterationError("tau update hit an exact division by zero (alpha = 1)")
    return max(num / denom, 0.0)


def se_step(state: SEState, params: SEParams) -> SEState:
    """One full sweep of the recursion, with damping on (A1, tau1)."""
    a1, tau1 = state.a1, state.tau1
    alpha1, e1 = e1_moments(a1, tau1, params.prior, params.penalty, params.moment_backend)
    v1 = alpha1 / a1
    a2 = float(np.clip(1.0 / v1 - a1, *A_CLIP))
    tau2 = _tau_update(e1 - alpha1 * alpha1 * tau1, 1.0 - alpha1)

    alpha2, e2 = e2_moments(a2, tau2, params.delta0, params.law)
    v2 = alpha2 / a2
    a1_cand = float(np.clip(1.0 / v2 - a2, *A_CLIP))
    tau1_cand = _tau_update(e2 - alpha2 * alpha2 * tau2, 1.0 - alpha2)

    d = params.damping
    return SEState(
        a1=d * a1_cand + (1.0 - d) * a1,
        tau1=d * tau1_cand + (1.0 - d) * tau1,
        a2=a2,
        v1=v1,
        v2=v2,
        alpha1=alpha1,
        alpha2=alpha2,
        tau2=tau2,
        e1=e1,
        e2=e2,
        k=state.k + 1,
    )


def solve_se(params: SEParams) -> FixedPointReport:
    """Iterate ``se_step`` until the relative change of (E, V) is below tol.

    Non-convergence is reported through the flag, not raised.
    """
    state = SEState(a1=params.init_a1, tau1=params.init_tau1)
    e_prev = math.inf
    v_prev = math.inf
    residual = math.inf
    converged = False
    for _ in range(params.max_iters):
        state = se_step(state, params)
        residual = max(abs(state.e1 - e_prev), abs(state.v1 - v_prev)) / (1.0 + abs(state.e1))
        e_prev, v_prev = state.e1, state.v1
        if residual <= params.tol:
            converged = True
            break
    return FixedPointReport(
        E=state.e1,
        V=state.v1,
        a1=state.a1,
        a2=state.a2,
        tau1=state.tau1,
        tau2=state.tau2,
        converged=converged,
        residual=residual,
        iterations=state.k,
    )
