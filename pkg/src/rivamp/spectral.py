"""Spectral laws of C = F^T F: transforms, expectations and matrix sampling.

A law is a mixture of point masses ("atoms") and at most one continuous
component carried by a deterministic Gauss-Legendre rule, so every
expectation taken here is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CapabilityError,
    DomainError,
    EvaluationError,
    InvariantError,
    ParameterError,
    RangeError,
)

ENSEMBLE_KINDS = ("gaussian-iid", "row-orthogonal", "uniform-singular", "explicit-singular-values")

# Total Gauss-Legendre node budget for continuous components.  Atoms are
# handled analytically, so this only controls the density quadrature.
QUAD_NODES = 2000
_PANEL_ORDER = 20

_ATOL_WEIGHT = 1e-12
_ATOL_DENSITY = 1e-8


def _composite_gauss_legendre(lo: float, hi: float, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule with ~n_nodes points on [lo, hi]."""
    n_panels = max(1, n_nodes // _PANEL_ORDER)
    base_x, base_w = np.polynomial.legendre.leggauss(_PANEL_ORDER)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    w = (half[:, None] * base_w[None, :]).ravel()
    return x, w


@dataclass(frozen=True)
class ContinuousComponent:
    """Continuous part of a spectral law.

    ``nodes``/``node_weights`` form a fixed quadrature rule for the measure
    ``weight * pdf`` on ``support``; the weights sum to ``weight``.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    weight: float
    kind: str
    params: dict
    nodes: np.ndarray = field(repr=False)
    node_weights: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SpectralLaw:
    """Probability law of the eigenvalues of C = F^T F.

    atoms: sequence of (location, weight) point masses.
    continuous: optional continuous component.
    """

    atoms: tuple[tuple[float, float], ...]
    continuous: ContinuousComponent | None = None

    def __post_init__(self):
        atoms = tuple((float(l), float(w)) for l, w in self.atoms if w != 0.0)
        object.__setattr__(self, "atoms", atoms)
        total = sum(w for _, w in atoms)
        if self.continuous is not None:
            total += self.continuous.weight
            lo, hi = self.continuous.support
            if lo < 0 or hi < lo:
                raise InvariantError("continuous support must be an interval inside [0, inf)")
            quad_mass = float(np.sum(self.continuous.node_weights))
            if abs(quad_mass / self.continuous.weight - 1.0) > _ATOL_DENSITY:
                raise InvariantError(
                    f"continuous density integrates to {quad_mass / self.continuous.weight:.12g}, not 1"
                )
        if abs(total - 1.0) > _ATOL_WEIGHT:
            raise InvariantError(f"law weights sum to {total:.17g}, not 1")
        for loc, w in atoms:
            if loc < 0:
                raise InvariantError(f"atom location {loc} outside [0, inf)")
            if not 0.0 <= w <= 1.0:
                raise InvariantError(f"atom weight {w} outside [0, 1]")
        if self.continuous is None and all(loc == 0.0 for loc, _ in atoms):
            raise InvariantError("law has all mass at zero; a non-trivial spectrum is required")

    # -- basic geometry -------------------------------------------------

    @property
    def support_min(self) -> float:
        vals = [loc for loc, _ in self.atoms]
        if self.continuous is not None:
            vals.append(self.continuous.support[0])
        return min(vals)

    @property
    def support_max(self) -> float:
        vals = [loc for loc, _ in self.atoms]
        if self.continuous is not None:
            vals.append(self.continuous.support[1])
        return max(vals)

    def cdf(self, x) -> np.ndarray:
        """Law CDF evaluated through the quadrature rule (atoms exactly)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for loc, w in self.atoms:
            out = out + w * (x >= loc)
        if self.continuous is not None:
            csum = np.concatenate([[0.0], np.cumsum(self.continuous.node_weights)])
            idx = np.searchsorted(self.continuous.nodes, x, side="right")
            out = out + csum[idx]
        return out


def expect(law: SpectralLaw, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """E[g(lambda)] under the law; atoms exactly, continuous part by quadrature."""
    total = 0.0
    for loc, w in law.atoms:
        val = float(g(np.asarray(loc, dtype=float)))
        if not np.isfinite(val):
            raise EvaluationError(f"g is not finite at atom {loc}")
        total += w * val
    if law.continuous is not None:
        vals = np.asarray(g(law.continuous.nodes), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError("g is not finite on the continuous support")
        total += float(np.dot(law.continuous.node_weights, vals))
    return total


# -- Stieltjes and R transforms -----------------------------------------


def _require_below_support(law: SpectralLaw, z: float) -> None:
    if not z < law.support_min:
        raise DomainError(
            f"z = {z:g} is not strictly below the support infimum {law.support_min:g}"
        )


def stieltjes(law: SpectralLaw, z: float) -> float:
    """S(z) = E[1/(lambda - z)] for z strictly below the support."""
    z = float(z)
    _require_below_support(law, z)
    return expect(law, lambda lam: 1.0 / (lam - z))


def stieltjes_derivative(law: SpectralLaw, z: float) -> float:
    """S'(z) = E[1/(lambda - z)^2] on the same domain as ``stieltjes``."""
    z = float(z)
    _require_below_support(law, z)
    return expect(law, lambda lam: 1.0 / (lam - z) ** 2)


def _attainable_sup(law: SpectralLaw) -> float:
    smin = law.support_min
    return stieltjes(law, smin - 1e-13 * max(1.0, abs(smin)))


def stieltjes_inverse(law: SpectralLaw, y: float) -> float:
    """Solve S(z) = y for z below the support.

    S is strictly increasing from 0 to its supremum on the valid domain, so
    bracketing plus bisection is globally safe; a few Newton steps polish the
    root to |S(z) - y| <= 1e-12 * y.
    """
    y = float(y)
    if y <= 0.0:
        raise ParameterError("stieltjes values are strictly positive; y must be > 0")
    smin = law.support_min
    scale = max(1.0, abs(smin))

    # March toward the support until S exceeds y.
    hi = None
    prev = smin - scale
    delta = scale
    for _ in range(80):
        cand = smin - delta
        if stieltjes(law, cand) >= y:
            hi = cand
            break
        prev = cand
        delta /= 4.0
        if delta < 1e-15 * scale:
            break
    if hi is None:
        raise RangeError("y is above the attainable Stieltjes range", (0.0, _attainable_sup(law)))
    lo = prev
    while stieltjes(law, lo) > y:
        lo = smin - 2.0 * (smin - lo)

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if stieltjes(law, mid) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, abs(mid)):
            break
    z = 0.5 * (lo + hi)
    for _ in range(8):
        resid = stieltjes(law, z) - y
        if abs(resid) <= 1e-15 * y:
            break
        step = resid / stieltjes_derivative(law, z)
        cand = z - step
        if not cand < smin:
            break
        z = cand
    return z


def r_transform(law: SpectralLaw, x: float) -> float:
    """R(x) = S^{-1}(-x) - 1/x for strictly negative x."""
    x = float(x)
    if x >= 0.0:
        raise ParameterError("the R-transform is evaluated on strictly negative arguments")
    return stieltjes_inverse(law, -x) - 1.0 / x


def r_transform_derivative(law: SpectralLaw, x: float) -> float:
    """R'(x) = -1/S'(S^{-1}(-x)) + 1/x^2 for strictly negative x.

    Evaluated in the cancellation-free form (S' - y^2) / (y^2 S') with
    S' - S^2 = Var[1/(lambda - z)] taken as a single expectation; the naive
    difference of two ~1/x^2 terms loses all precision as x -> 0.
    """
    x = float(x)
    if x >= 0.0:
        raise ParameterError("the R-transform is evaluated on strictly negative arguments")
    y = -x
    z = stieltjes_inverse(law, y)
    s = stieltjes(law, z)
    var = expect(law, lambda lam: (1.0 / (lam - z) - s) ** 2)
    sprime = var + s * s
    return (var + (s - y) * (s + y)) / (y * y * sprime)


# -- built-in laws -------------------------------------------------------


def marchenko_pastur_law(alpha: float, n_nodes: int = QUAD_NODES) -> SpectralLaw:
    """Limiting eigenvalue law of F^T F for i.i.d. entries of variance 1/N.

    Continuous density sqrt((b - x)(x - a)) / (2 pi x) on [a, b] with
    a = (1 - sqrt(alpha))^2, b = (1 + sqrt(alpha))^2, plus a zero atom of
    weight max(0, 1 - alpha) in the undersampled regime.  The quadrature is
    built in the arcsine variable, which absorbs the square-root edges.
    """
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    a = (1.0 - np.sqrt(alpha)) ** 2
    b = (1.0 + np.sqrt(alpha)) ** 2
    r = 0.5 * (b - a)
    c = 0.5 * (a + b)
    weight = min(1.0, alpha)

    phi, w_phi = _composite_gauss_legendre(0.0, np.pi, n_nodes)
    lam = c - r * np.cos(phi)
    node_w = w_phi * (r * np.sin(phi)) ** 2 / (2.0 * np.pi * lam)
    # Rescale the tiny quadrature defect so the mixture is normalized exactly.
    node_w *= weight / float(np.sum(node_w))

    def pdf(x):
        x = np.asarray(x, dtype=float)
        inside = (x > a) & (x < b)
        out = np.zeros_like(x)
        xi = x[inside]
        out[inside] = np.sqrt((b - xi) * (xi - a)) / (2.0 * np.pi * xi) / weight
        return out

    cont = ContinuousComponent(
        pdf=pdf,
        support=(a, b),
        weight=weight,
        kind="marchenko-pastur",
        params={"alpha": float(alpha)},
        nodes=lam,
        node_weights=node_w,
    )
    atoms = [] if alpha >= 1.0 else [(0.0, 1.0 - alpha)]
    return SpectralLaw(atoms=tuple(atoms), continuous=cont)


def row_orthogonal_law(alpha: float) -> SpectralLaw:
    """max(0, 1 - alpha) at 0 plus min(1, alpha) at 1."""
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    atoms = [(1.0, min(1.0, alpha))]
    if alpha < 1.0:
        atoms.insert(0, (0.0, 1.0 - alpha))
    return SpectralLaw(atoms=tuple(atoms))


def uniform_singular_law(alpha: float, shift: float = 1.0, n_nodes: int = QUAD_NODES) -> SpectralLaw:
    """Eigenvalue law of F^T F when singular values of F are uniform.

    Singular values are drawn from U([(shift - alpha)^2, (shift + alpha)^2]),
    so the eigenvalue density is 1 / (2 (v - u) sqrt(x)) on [u^2, v^2] with
    weight min(1, alpha), plus a zero atom of weight max(0, 1 - alpha).  The
    quadrature integrates in the singular value, where the density is flat.
    """
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    if shift <= 0:
        raise ParameterError("shift must be positive")
    u = (shift - alpha) ** 2
    v = (shift + alpha) ** 2
    weight = min(1.0, alpha)

    s, w_s = _composite_gauss_legendre(u, v, n_nodes)
    lam = s**2
    node_w = w_s * weight / (v - u)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        inside = (x > u**2) & (x < v**2)
        out = np.zeros_like(x)
        out[inside] = 1.0 / (2.0 * (v - u) * np.sqrt(x[inside]))
        return out

    cont = ContinuousComponent(
        pdf=pdf,
        support=(u**2, v**2),
        weight=weight,
        kind="uniform-singular",
        params={"alpha": float(alpha), "shift": float(shift)},
        nodes=lam,
        node_weights=node_w,
    )
    atoms = [] if alpha >= 1.0 else [(0.0, 1.0 - alpha)]
    return SpectralLaw(atoms=tuple(atoms), continuous=cont)


def empirical_law(singular_values: Sequence[float], n: int) -> SpectralLaw:
    """Atom mixture at squared singular values, zero-padded to dimension n."""
    d = np.asarray(singular_values, dtype=float)
    if np.any(d < 0):
        raise ParameterError("singular values must be nonnegative")
    if len(d) > n:
        raise ParameterError("more singular values than the signal dimension")
    atoms = [(float(di**2), 1.0 / n) for di in d]
    pad = (n - len(d)) / n
    if pad > 0:
        atoms.insert(0, (0.0, pad))
    return SpectralLaw(atoms=tuple(atoms))


# -- matrix ensembles ----------------------------------------------------


@dataclass(frozen=True)
class MatrixEnsemble:
    """Rotationally invariant ensemble F = U D V^T of aspect ratio alpha = M/N.

    ``shift`` parametrizes the uniform-singular family (interval center);
    ``singular_values`` is required for, and only for, the explicit kind.
    """

    kind: str
    alpha: float
    n: int
    shift: float = 1.0
    singular_values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise ParameterError(f"unknown ensemble kind {self.kind!r}")
        if self.alpha <= 0:
            raise ParameterError("alpha must be positive")
        if self.n < 1:
            raise ParameterError("n must be at least 1")
        if self.m < 1:
            raise InvariantError("derived M = floor(alpha * N) must be at least 1")
        if self.kind == "explicit-singular-values":
            if self.singular_values is None:
                raise ParameterError("explicit ensembles need singular values")
            d = np.asarray(self.singular_values, dtype=float)
            if d.shape != (min(self.m, self.n),):
                raise InvariantError(
                    f"explicit ensemble needs exactly min(M, N) = {min(self.m, self.n)} singular values"
                )
            if np.any(d < 0):
                raise InvariantError("singular values must be nonnegative")
            object.__setattr__(self, "singular_values", d)
        elif self.singular_values is not None:
            raise ParameterError("singular_values is only valid for the explicit kind")

    @property
    def m(self) -> int:
        return int(np.floor(self.alpha * self.n))


def law_for_ensemble(ensemble: MatrixEnsemble) -> SpectralLaw:
    """Limiting (or empirical, for explicit ensembles) spectral law of F^T F."""
    if ensemble.kind == "gaussian-iid":
        return marchenko_pastur_law(ensemble.alpha)
    if ensemble.kind == "row-orthogonal":
        return row_orthogonal_law(ensemble.alpha)
    if ensemble.kind == "uniform-singular":
        return uniform_singular_law(ensemble.alpha, ensemble.shift)
    return empirical_law(ensemble.singular_values, ensemble.n)


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via sign-corrected QR."""
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diagonal(r))
    d = np.where(d == 0, 1.0, d)
    return q * d


def sample_matrix(ensemble: MatrixEnsemble, seed: int) -> np.ndarray:
    """Draw F (M x N) from the ensemble; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    m, n = ensemble.m, ensemble.n
    if ensemble.kind == "gaussian-iid":
        return rng.standard_normal((m, n)) / np.sqrt(n)
    r = min(m, n)
    if ensemble.kind == "row-orthogonal":
        d = np.ones(r)
    elif ensemble.kind == "uniform-singular":
        lo = (ensemble.shift - ensemble.alpha) ** 2
        hi = (ensemble.shift + ensemble.alpha) ** 2
        d = rng.uniform(lo, hi, size=r)
    else:
        d = ensemble.singular_values
    u = haar_orthogonal(m, rng)
    v = haar_orthogonal(n, rng)
    return (u[:, :r] * d) @ v[:, :r].T


# -- serialization -------------------------------------------------------


def law_to_dict(law: SpectralLaw) -> dict:
    """JSON-ready form: {atoms: [[loc, w], ...], density: {...} | None}."""
    density = None
    if law.continuous is not None:
        c = law.continuous
        density = {
            "kind": c.kind,
            "params": dict(c.params),
            "support": [c.support[0], c.support[1]],
            "weight": c.weight,
        }
    return {"atoms": [[loc, w] for loc, w in law.atoms], "density": density}


def law_from_dict(data: dict) -> SpectralLaw:
    """Rebuild a law emitted by ``law_to_dict``; known density kinds only."""
    density = data.get("density")
    if density is None:
        return SpectralLaw(atoms=tuple((float(l), float(w)) for l, w in data["atoms"]))
    kind = density["kind"]
    params = density["params"]
    if kind == "marchenko-pastur":
        return marchenko_pastur_law(params["alpha"])
    if kind == "uniform-singular":
        return uniform_singular_law(params["alpha"], params.get("shift", 1.0))
    raise CapabilityError(f"density kind {kind!r} cannot be reconstructed from a dictionary")
