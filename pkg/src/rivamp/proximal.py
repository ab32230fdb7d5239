"""Proximal operators of the supported penalties and of the quadratic loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvariantError, ParameterError


@dataclass(frozen=True)
class Penalty:
    """Separable convex regularizer lambda1 * |x|_1 + (lambda2 / 2) * x^2."""

    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("penalty weights must be nonnegative")

    @property
    def strong_convexity(self) -> float:
        return self.lambda2

    @property
    def smoothness(self) -> float:
        return self.lambda2 if self.lambda1 == 0 else math.inf

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.lambda1 * np.sum(np.abs(x)) + 0.5 * self.lambda2 * np.sum(x * x))


def soft_threshold(y, threshold: float):
    return np.sign(y) * np.maximum(np.abs(y) - threshold, 0.0)


def prox_scalar(penalty: Penalty, gamma: float, y: float) -> float:
    """argmin_x penalty(x) + (x - y)^2 / (2 gamma): shrunk soft threshold."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    return float(soft_threshold(y, gamma * penalty.lambda1) / (1.0 + gamma * penalty.lambda2))


def prox_derivative(penalty: Penalty, gamma: float, y: float) -> float:
    """Derivative of the scalar proximal map, in [0, 1].

    At the threshold kink |y| = gamma * lambda1 the outside-branch value is
    returned by convention.
    """
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if abs(y) < gamma * penalty.lambda1:
        return 0.0
    return 1.0 / (1.0 + gamma * penalty.lambda2)


def prox_vector(penalty: Penalty, gamma: float, y: np.ndarray) -> np.ndarray:
    """Elementwise proximal map of a separable penalty."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ParameterError("empty input vector")
    return soft_threshold(y, gamma * penalty.lambda1) / (1.0 + gamma * penalty.lambda2)


def jacobian_trace_average(penalty: Penalty, gamma: float, y: np.ndarray) -> float:
    """(1/N) sum of elementwise prox derivatives, the <prox'> of the updates."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ParameterError("empty input vector")
    outside = np.abs(y) >= gamma * penalty.lambda1
    return float(np.mean(outside) / (1.0 + gamma * penalty.lambda2))


class QuadraticLossOracle:
    """Cached SVD solver for (F^T F + a2 Id)^{-1} (F^T y + b2).

    The SVD amortizes across iterations and across a2 values; the instance is
    immutable after construction and safe to share between threads.
    """

    def __init__(self, f_matrix: np.ndarray, y: np.ndarray):
        f_matrix = np.asarray(f_matrix, dtype=float)
        y = np.asarray(y, dtype=float)
        if f_matrix.ndim != 2 or y.shape != (f_matrix.shape[0],):
            raise ParameterError("need F with shape (M, N) and y with shape (M,)")
        u, s, vt = np.linalg.svd(f_matrix, full_matrices=False)
        recon = (u * s) @ vt
        scale = np.linalg.norm(f_matrix)
        if np.linalg.norm(recon - f_matrix) > 1e-10 * max(scale, 1e-300):
            raise InvariantError("SVD reconstruction error above 1e-10 * ||F||")
        self.m, self.n = f_matrix.shape
        self.singular_values = s
        self._vt = vt
        self.fty = f_matrix.T @ y

    @cached_property
    def gram_eigenvalues(self) -> np.ndarray:
        return self.singular_values**2

    def inverse_trace_average(self, a2: float) -> float:
        """(1/N) Tr[(F^T F + a2 Id)^{-1}]."""
        if a2 <= 0:
            raise ParameterError("a2 must be positive")
        r = len(self.singular_values)
        return float((np.sum(1.0 / (self.gram_eigenvalues + a2)) + (self.n - r) / a2) / self.n)


def prox_quadratic_loss(oracle: QuadraticLossOracle, a2: float, b2: np.ndarray) -> np.ndarray:
    """(F^T F + a2 Id)^{-1} (F^T y + b2) through the cached SVD.

    The null-space component of the right-hand side is simply divided by a2;
    with full column rank that branch is skipped, as evaluating the
    analytically-cancelling t/a2 pair would amplify rounding noise by 1/a2.
    """
    if a2 <= 0:
        raise ParameterError("a2 must be positive")
    b2 = np.asarray(b2, dtype=float)
    if b2.shape != (oracle.n,):
        raise ParameterError(f"b2 must have shape ({oracle.n},), got {b2.shape}")
    t = oracle.fty + b2
    w = oracle._vt @ t
    if len(oracle.singular_values) == oracle.n:
        return oracle._vt.T @ (w / (oracle.gram_eigenvalues + a2))
    scale = 1.0 / (oracle.gram_eigenvalues + a2) - 1.0 / a2
    return t / a2 + oracle._vt.T @ (scale * w)
