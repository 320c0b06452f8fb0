"""Least Squares EM: E-step weights, update maps and the iteration driver.

The population update is

    M(beta*, beta) = E_{X ~ f_{beta*, sigma}} X tanh(F_{beta, sigma}(X) / 2),
    F_{beta, sigma}(x) = g(||x + beta|| / sigma) - g(||x - beta|| / sigma),

where ``g`` belongs to the *fitted* density and the expectation is over the
*true* component density.  Integrating over one component is equivalent to
integrating over the mixture because the integrand is even in ``x``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

from .densities import RadialDensity, sample
from .mixture import LabeledSample, MixtureModel, sample_mixture
from .numerics import (DEFAULT_SPEC, DEFAULT_SPEC_2D, DEFAULT_SPEC_3D, LSEMError,
                       NumericalError, QuadratureSpec, RngSeed, integrate_1d, tensor_rule)

logger = logging.getLogger(__name__)

__all__ = [
    "DivergenceError",
    "FittedDensitySpec",
    "MCEstimate",
    "IterateTrace",
    "UpdateEngine",
    "e_step_weights",
    "f_gap",
    "population_update_1d",
    "population_update_2d",
    "population_update_mc",
    "sample_update",
    "q_value",
    "q_improvement",
    "run_lsem",
]


class DivergenceError(NumericalError):
    pass


@dataclass(frozen=True)
class FittedDensitySpec:
    """The density LS-EM assumes; ``matches_truth`` is bookkeeping only."""

    g_hat: RadialDensity
    matches_truth: bool = True


def _fitted_density(fitted) -> RadialDensity:
    return fitted.g_hat if isinstance(fitted, FittedDensitySpec) else fitted


def f_gap(fitted, beta, sigma: float, x):
    """``g(||x + beta|| / sigma) - g(||x - beta|| / sigma)`` (vectorised over x).

    In one dimension ``beta`` and ``x`` may be scalars / 1-d arrays of
    scalars; otherwise ``x`` has shape ``(..., d)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    dens = _fitted_density(fitted)
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    d = beta.size
    if d == 1:
        # scalar points, or an (..., 1) array of one-dimensional points
        if x.ndim >= 2 and x.shape[-1] == 1:
            x = x[..., 0]
        b = float(beta.reshape(-1)[0])
        return dens.g(np.abs(x + b) / sigma, 1) - dens.g(np.abs(x - b) / sigma, 1)
    beta = beta.reshape(-1)
    plus = np.linalg.norm(x + beta, axis=-1) / sigma
    minus = np.linalg.norm(x - beta, axis=-1) / sigma
    return dens.g(plus, d) - dens.g(minus, d)


def e_step_weights(fitted, beta, sigma: float, x):
    """Posterior label probabilities ``(p1, p2)``; ``p1 = logistic(F)``."""
    gap = f_gap(fitted, beta, sigma, x)
    return expit(gap), expit(-gap)


def _half_tanh(gap):
    # np.tanh saturates to +/-1 without overflow for any finite argument
    return np.tanh(0.5 * gap)


def _integration_half_width(truth_density: RadialDensity, fitted: RadialDensity, d: int,
                            spec: QuadratureSpec) -> float:
    return max(spec.truncation_radius, truth_density.support_radius(d))


def component_expectation_1d(density: RadialDensity, center: float, sigma: float, fn,
                             kinks: Sequence[float] = (), spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``E_{X ~ f_{center, sigma}} fn(X)`` in one dimension by quadrature."""
    log_c = density.log_norm_const(1)

    def integrand(x):
        w = np.exp(-density.g(np.abs(x - center) / sigma, 1) - log_c) / sigma
        return w * fn(x)

    half = max(spec.truncation_radius, density.support_radius(1)) * sigma
    return integrate_1d(integrand, center=center, spec=spec, scale=sigma,
                        kinks=(center, *kinks), half_width=half)


def population_update_1d(truth: MixtureModel, fitted, beta: float,
                         spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """One-dimensional population update by quadrature.

    With ``fitted`` different from the truth density this is the
    mis-specified update.  ``beta == 0`` returns exactly 0.
    """
    if truth.d != 1:
        raise ValueError("population_update_1d needs a one-dimensional model")
    beta = float(np.asarray(beta, dtype=float).reshape(-1)[0])
    if beta == 0.0:
        return 0.0
    dens = _fitted_density(fitted)
    sigma = truth.sigma

    def fn(x):
        return x * _half_tanh(dens.g(np.abs(x + beta) / sigma, 1) - dens.g(np.abs(x - beta) / sigma, 1))

    return component_expectation_1d(truth.density, float(truth.beta_star[0]), sigma, fn,
                                    kinks=(beta, -beta), spec=spec)


def span_basis(beta: np.ndarray, beta_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal ``(v1, v2)`` with ``v1 = beta/|beta|`` and ``<v2, beta*> >= 0``."""
    v1 = beta / np.linalg.norm(beta)
    w = beta_star - (beta_star @ v1) * v1
    wn = np.linalg.norm(w)
    if wn > 1e-14 * max(1.0, np.linalg.norm(beta_star)):
        return v1, w / wn
    # beta parallel to beta*: any orthogonal direction works
    e = np.zeros_like(v1)
    e[int(np.argmin(np.abs(v1)))] = 1.0
    w = e - (e @ v1) * v1
    return v1, w / np.linalg.norm(w)


def in_span_update(truth_density: RadialDensity, fitted, b: float, b1_star: float,
                   b2_star: float, sigma: float, d: int,
                   spec: QuadratureSpec | None = None) -> tuple[float, float]:
    """In-span coordinates ``(m1, m2)`` of the update in the basis of :func:`span_basis`.

    ``beta = (b, 0, ...)`` and ``beta* = (b1_star, b2_star, 0, ...)``.  For
    d = 2 this is a 2-d integral; for d >= 3 the d - 2 remaining coordinates
    are folded into their radius, giving a 3-d integral with weight
    ``|S^{d-3}| rho^{d-3}``.
    """
    dens = _fitted_density(fitted)
    half = _integration_half_width(truth_density, dens, d,
                                   spec or DEFAULT_SPEC_2D) * sigma
    log_c = truth_density.log_norm_const(d)
    kinks1 = (-b, b, b1_star)
    kinks2 = (0.0, b2_star)
    b1 = (b1_star - half, b1_star + half)
    b2 = (b2_star - half, b2_star + half)
    if d == 2:
        spec = spec or DEFAULT_SPEC_2D
        (x1, w1), (x2, w2) = tensor_rule(2, spec, [b1, b2], [kinks1, kinks2], sigma)
        X1, X2 = x1[:, None], x2[None, :]
        rho2 = 0.0
        weight = None
    else:
        spec = spec or DEFAULT_SPEC_3D
        (x1, w1), (x2, w2), (r, wr) = tensor_rule(3, spec, [b1, b2, (0.0, half)],
                                                  [kinks1, kinks2, (0.0,)], sigma)
        X1, X2 = x1[:, None, None], x2[None, :, None]
        R = r[None, None, :]
        m = d - 2
        log_area = math.log(2.0) + 0.5 * m * math.log(math.pi) - gammaln(0.5 * m)
        rho2 = R * R
        weight = np.exp(log_area) * R ** (m - 1)
    t_star = np.sqrt((X1 - b1_star) ** 2 + (X2 - b2_star) ** 2 + rho2) / sigma
    base = np.exp(-truth_density.g(t_star, d) - log_c) / sigma ** d
    plus = np.sqrt((X1 + b) ** 2 + X2 ** 2 + rho2) / sigma
    minus = np.sqrt((X1 - b) ** 2 + X2 ** 2 + rho2) / sigma
    common = base * _half_tanh(dens.g(plus, d) - dens.g(minus, d))
    if weight is not None:
        common = common * weight
    if not np.all(np.isfinite(common)):
        raise NumericalError("non-finite integrand in the in-span update")
    if d == 2:
        m1 = float(w1 @ (common * X1) @ w2)
        m2 = float(w1 @ (common * X2) @ w2)
    else:
        m1 = float(np.einsum("ijk,i,j,k->", common * X1, w1, w2, wr))
        m2 = float(np.einsum("ijk,i,j,k->", common * X2, w1, w2, wr))
    return m1, m2


def population_update_2d(truth: MixtureModel, fitted, beta,
                         spec: QuadratureSpec | None = None) -> np.ndarray:
    """Population update for d >= 2 computed in ``span(beta, beta*)``.

    Only the two in-span coordinates are integrated; the output has exactly
    zero component outside the span.
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    d = truth.d
    if d < 2 or beta.size != d:
        raise ValueError("population_update_2d needs d >= 2 and beta of matching size")
    bnorm = np.linalg.norm(beta)
    if bnorm == 0.0:
        if np.linalg.norm(truth.beta_star) == 0.0:
            raise LSEMError("degenerate basis: beta and beta* are both zero")
        return np.zeros(d)
    v1, v2 = span_basis(beta, truth.beta_star)
    b1s, b2s = float(truth.beta_star @ v1), float(max(truth.beta_star @ v2, 0.0))
    m1, m2 = in_span_update(truth.density, fitted, bnorm, b1s, b2s, truth.sigma, d, spec)
    return m1 * v1 + m2 * v2


@dataclass(frozen=True)
class MCEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    n: int


def population_update_mc(truth: MixtureModel, fitted, beta, n: int,
                         rng: RngSeed | np.random.Generator) -> MCEstimate:
    """Monte Carlo estimate of the population update with per-coordinate standard errors."""
    if n < 10_000:
        raise ValueError("population_update_mc needs n >= 1e4")
    gen = rng.generator() if isinstance(rng, RngSeed) else rng
    d = truth.d
    beta = np.asarray(beta, dtype=float).reshape(d)
    x = truth.beta_star + truth.sigma * sample(truth.density, d, n, gen)
    terms = x * _half_tanh(f_gap(fitted, beta, truth.sigma, x))[:, None]
    return MCEstimate(terms.mean(axis=0), terms.std(axis=0, ddof=1) / math.sqrt(n), n)


def sample_update(fitted, sigma: float, beta, data, data_kind: str = "mixture") -> np.ndarray:
    """Finite-sample update ``mean_i X_i tanh(F(X_i) / 2)``.

    ``data_kind`` records whether ``data`` came from one component
    (``"component"``) or from the mixture (``"mixture"``).  The summand is even
    in ``x``, so both cases use the same average and estimate the same
    population update.
    """
    if data_kind not in ("mixture", "component"):
        raise ValueError("data_kind must be 'mixture' or 'component'")
    if isinstance(data, LabeledSample):
        data = data.x
    x = np.asarray(data, dtype=float)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty data")
    if x.shape[1] != beta.size:
        raise ValueError("data and beta dimensions differ")
    weight = _half_tanh(f_gap(fitted, beta, sigma, x))
    return (x * weight[:, None]).mean(axis=0)


def _mixture_expectation_1d(truth: MixtureModel, fn, kinks, spec) -> float:
    bs = float(truth.beta_star[0])
    return 0.5 * (component_expectation_1d(truth.density, bs, truth.sigma, fn, kinks, spec)
                  + component_expectation_1d(truth.density, -bs, truth.sigma, fn, kinks, spec))


def q_value(truth: MixtureModel, b: float, beta: float, spec: QuadratureSpec = DEFAULT_SPEC,
            fitted=None) -> float:
    """Minorization objective ``Q(b | beta)`` of standard EM (1-d, over the mixture)."""
    if truth.d != 1:
        raise ValueError("q_value is one-dimensional")
    dens = _fitted_density(fitted) if fitted is not None else truth.density
    s = truth.sigma
    log_c = dens.log_norm_const(1) + math.log(s)

    def fn(x):
        p1, p2 = e_step_weights(dens, beta, s, x)
        return (p1 * (-dens.g(np.abs(x - b) / s, 1) - log_c)
                + p2 * (-dens.g(np.abs(x + b) / s, 1) - log_c))

    return _mixture_expectation_1d(truth, fn, (b, -b, beta, -beta), spec)


def q_improvement(truth: MixtureModel, beta: float, b_new: float,
                  spec: QuadratureSpec = DEFAULT_SPEC, fitted=None) -> float:
    """``Q(b_new | beta) - Q(beta | beta)`` as a single integral (no cancellation)."""
    dens = _fitted_density(fitted) if fitted is not None else truth.density
    s = truth.sigma

    def fn(x):
        p1, p2 = e_step_weights(dens, beta, s, x)
        return (p1 * (dens.g(np.abs(x - beta) / s, 1) - dens.g(np.abs(x - b_new) / s, 1))
                + p2 * (dens.g(np.abs(x + beta) / s, 1) - dens.g(np.abs(x + b_new) / s, 1)))

    return _mixture_expectation_1d(truth, fn, (b_new, -b_new, beta, -beta), spec)


@dataclass
class UpdateEngine:
    """One LS-EM update rule.

    ``mode`` is ``population_1d``, ``population_2d``, ``monte_carlo`` or
    ``finite_sample``.  The finite-sample engine either reuses ``data`` every
    iteration or, when ``data`` is None, draws a fresh batch of ``n`` mixture
    points per iteration from ``rng.child(t)`` (sample splitting).
    """

    mode: str
    truth: MixtureModel
    fitted: RadialDensity | FittedDensitySpec | None = None
    spec: QuadratureSpec | None = None
    n: int | None = None
    rng: RngSeed | None = None
    data: np.ndarray | LabeledSample | None = None
    data_kind: str = "mixture"

    _modes = ("population_1d", "population_2d", "monte_carlo", "finite_sample")

    def __post_init__(self):
        if self.mode not in self._modes:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.fitted is None:
            self.fitted = self.truth.density
        if self.mode == "population_2d" and self.truth.d < 2:
            raise ValueError("population_2d needs d >= 2")
        if self.mode == "population_1d" and self.truth.d != 1:
            raise ValueError("population_1d needs d = 1")
        if self.mode in ("monte_carlo", "finite_sample") and self.data is None:
            if self.n is None or self.rng is None:
                raise ValueError(f"{self.mode} needs n and rng")

    @property
    def sigma(self) -> float:
        return self.truth.sigma

    def step(self, beta: np.ndarray, t: int = 0) -> np.ndarray:
        if self.mode == "population_1d":
            return np.array([population_update_1d(self.truth, self.fitted, beta[0],
                                                  self.spec or DEFAULT_SPEC)])
        if self.mode == "population_2d":
            return population_update_2d(self.truth, self.fitted, beta, self.spec)
        if self.mode == "monte_carlo":
            return population_update_mc(self.truth, self.fitted, beta, self.n,
                                        self.rng.child(t)).mean
        data = self.data
        if data is None:
            data = sample_mixture(self.truth, self.n, self.rng.child(t))
        return sample_update(self.fitted, self.sigma, beta, data, self.data_kind)


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return math.nan
    return float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))


@dataclass
class IterateTrace:
    """LS-EM iterates with distance/angle diagnostics.

    ``distances`` are measured to ``sign(<beta0, beta*>) beta*``, the point
    the iteration is expected to reach.
    """

    iterates: list = field(default_factory=list)
    distances: list | None = None
    angles: list | None = None
    per_step_kappa: list | None = None
    converged: bool = False
    target: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def __len__(self) -> int:
        return len(self.iterates)

    def rows(self):
        for t, it in enumerate(self.iterates):
            dist = self.distances[t] if self.distances is not None else math.nan
            ang = self.angles[t] if self.angles is not None else math.nan
            yield [t, *map(float, it), dist, ang]

    def header(self) -> list[str]:
        d = len(self.iterates[0])
        return ["t", *[f"beta_{j + 1}" for j in range(d)], "dist", "angle"]


def run_lsem(engine: UpdateEngine, beta0, tol: float = 1e-9, max_iter: int = 1000,
             truth_for_diagnostics=None) -> IterateTrace:
    """Iterate ``engine`` from ``beta0`` until the relative step is below ``tol``."""
    beta = np.array(beta0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta0 must be finite")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    trace = IterateTrace(iterates=[beta.copy()])
    target = None
    if truth_for_diagnostics is not None:
        bs = np.asarray(truth_for_diagnostics, dtype=float).reshape(-1)
        target = bs if beta @ bs >= 0 else -bs
        trace.target = target
        trace.distances = [float(np.linalg.norm(beta - target))]
        trace.angles = [_angle(beta, bs)]
        trace.per_step_kappa = []
    for t in range(max_iter):
        new = np.asarray(engine.step(beta, t), dtype=float).reshape(beta.shape)
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"non-finite iterate at step {t + 1}")
        step = np.linalg.norm(new - beta)
        trace.iterates.append(new.copy())
        if target is not None:
            dist = float(np.linalg.norm(new - target))
            prev = trace.distances[-1]
            trace.per_step_kappa.append(dist / prev if prev > 0 else math.nan)
            trace.distances.append(dist)
            trace.angles.append(_angle(new, truth_for_diagnostics))
        beta = new
        if step <= tol * max(1.0, np.linalg.norm(trace.iterates[-2])):
            trace.converged = True
            break
    return trace
