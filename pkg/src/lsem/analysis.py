"""Numerical probes of the LS-EM convergence theory.

Contraction factors and their closed-form bounds, fixed-point scans, the
orthogonal-axis probe that separates light-tailed (r > 2) from heavier-tailed
polynomial families, order-level rate predictions, the mis-specified fixed
point and the finite-sample error scaling.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .densities import NAMED_FAMILIES, RadialDensity, estimate_orlicz_norm, make_density
from .em import (IterateTrace, UpdateEngine, component_expectation_1d, in_span_update,
                 population_update_1d, run_lsem, sample_update)
from .mixture import MixtureModel, sample_mixture
from .numerics import DEFAULT_SPEC, LSEMError, QuadratureSpec, RngSeed, bisect

logger = logging.getLogger(__name__)

__all__ = [
    "ContractionReport",
    "FixedPointScan",
    "RatePrediction",
    "MisspecResult",
    "ScalingResult",
    "TwoStageResult",
    "angle",
    "kappa_numeric",
    "kappa_closed_form",
    "fixed_point_scan_1d",
    "orthogonal_axis_update",
    "orthogonal_fixed_point",
    "d1_slope",
    "noncontraction_witness",
    "predict_rates",
    "misspecified_fixed_point",
    "finite_sample_scaling",
    "two_stage_trial",
    "envelope_violation",
]

# one-dimensional calibration scales of the unit-variance named families
SIGMA0 = {"gaussian": 1.0, "laplace": 1.0 / math.sqrt(2.0), "logistic": math.sqrt(3.0) / math.pi}


def _family_name(family) -> str:
    name = family.kind if isinstance(family, RadialDensity) else str(family).lower()
    return name


# --------------------------------------------------------------------------
# contraction factor

def kappa_closed_form(family, z: float, sigma: float = 1.0, form: str = "scaled") -> float:
    """Closed-form upper bound on the contraction factor for a named family.

    ``form="scaled"`` uses the parametrisation through the family's
    one-dimensional scale ``sigma0``; ``form="direct"`` evaluates the
    algebraically equivalent expressions written with explicit constants
    (``sqrt(2)`` for Laplace, ``pi / sqrt(3)`` for Logistic).
    """
    name = _family_name(family)
    if name not in NAMED_FAMILIES:
        raise LSEMError(f"no closed-form contraction bound for family {name!r}")
    if not sigma > 0 or z < 0:
        raise ValueError("need sigma > 0 and z >= 0")
    if name == "gaussian":
        return math.exp(-z * z / (2.0 * sigma * sigma))
    if form == "scaled":
        a = z / (SIGMA0[name] * sigma)
        if name == "laplace":
            return 2.0 * math.exp(-a) / (1.0 + math.exp(-2.0 * a))
        return 4.0 / (math.exp(a) + math.exp(-a) + 2.0) if a < 700 else 0.0
    if form == "direct":
        if name == "laplace":
            c = math.sqrt(2.0) / sigma
            return 2.0 * math.exp(-c * z) / (1.0 + math.exp(-2.0 * c * z))
        e = math.exp(-math.pi * z / (sigma * math.sqrt(3.0)))
        return 4.0 * e / (1.0 + e * e + 2.0 * e)
    raise ValueError(f"unknown form {form!r}")


@dataclass(frozen=True)
class ContractionReport:
    kappa_numeric: float
    kappa_closed_form: float | None
    z: float
    beta_star: float
    beta: float
    sigma: float
    family: str
    form_discrepancy: float | None = None

    @property
    def bound_holds(self) -> bool:
        if self.kappa_closed_form is None:
            return True
        return self.kappa_numeric <= self.kappa_closed_form * (1.0 + 1e-6)


def kappa_numeric(truth_density: RadialDensity, beta_star: float, beta: float, sigma: float = 1.0,
                  spec: QuadratureSpec = DEFAULT_SPEC) -> ContractionReport:
    """Exact one-dimensional contraction factor ``E[1 - tanh(F_{z,sigma}(X) / 2)]``.

    The expectation is over ``X ~ f_{z, sigma}`` with ``z = min(|beta|, |beta*|)``;
    ``1 - tanh(v / 2)`` is evaluated as ``2 expit(-v)`` to avoid cancellation.
    """
    z = min(abs(float(beta)), abs(float(beta_star)))
    if z == 0.0:
        value = 1.0
    else:
        dens = truth_density

        def fn(x):
            gap = dens.g(np.abs(x + z) / sigma, 1) - dens.g(np.abs(x - z) / sigma, 1)
            return 2.0 * expit(-gap)

        value = component_expectation_1d(dens, z, sigma, fn, kinks=(-z,), spec=spec)
    name = truth_density.kind
    closed = discrepancy = None
    if name in NAMED_FAMILIES:
        closed = kappa_closed_form(name, z, sigma)
        discrepancy = abs(closed - kappa_closed_form(name, z, sigma, form="direct"))
        if discrepancy > 1e-6:
            logger.warning("closed-form contraction bounds disagree by %.3g for %s", discrepancy, name)
    return ContractionReport(value, closed, z, float(beta_star), float(beta), float(sigma),
                             truth_density.label, discrepancy)


def angle(a, b) -> float:
    """Angle between two nonzero vectors, in radians."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("angle is undefined for a zero vector")
    return float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))


# --------------------------------------------------------------------------
# fixed points

@dataclass(frozen=True)
class FixedPointScan:
    roots: list
    brackets: list
    residuals: list
    scan_range: tuple
    grid_points: int


def fixed_point_scan_1d(update: Callable[[float], float], lo: float, hi: float,
                        grid_points: int = 2000, tol: float = 1e-12,
                        residual_tol: float = 1e-7) -> FixedPointScan:
    """All roots of ``update(x) - x`` on ``[lo, hi]`` found by grid bracketing.

    Exact zeros on the grid are reported directly (0 is always added to the
    grid when it lies inside, since the update maps 0 to exactly 0); sign
    changes between neighbours are refined by bisection.  Roots whose
    residual exceeds ``residual_tol`` are dropped with a warning.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    grid = np.linspace(lo, hi, grid_points)
    if lo < 0 < hi:
        grid = np.unique(np.append(grid, 0.0))
    h = np.array([update(float(x)) - float(x) for x in grid])
    roots, brackets = [], []
    for i in range(len(grid)):
        if h[i] == 0.0:
            roots.append(float(grid[i]))
            brackets.append((float(grid[i]), float(grid[i])))
        elif i + 1 < len(grid) and h[i + 1] != 0.0 and h[i] * h[i + 1] < 0:
            a, b = float(grid[i]), float(grid[i + 1])
            roots.append(bisect(lambda x: update(x) - x, a, b, tol=tol))
            brackets.append((a, b))
    kept, kept_br, res = [], [], []
    for r, br in zip(roots, brackets):
        resid = abs(update(r) - r)
        if resid <= residual_tol:
            kept.append(r)
            kept_br.append(br)
            res.append(resid)
        else:
            logger.warning("dropping bracket %s: residual %.3g at %.9g", br, resid, r)
    return FixedPointScan(kept, kept_br, res, (float(lo), float(hi)), int(grid_points))


def orthogonal_axis_update(truth: MixtureModel, fitted, b: float,
                           spec: QuadratureSpec | None = None) -> float:
    """Update coordinate along ``beta`` when ``beta = b e`` with ``e`` orthogonal to ``beta*``.

    The component along ``beta*`` vanishes by symmetry, so this number is the
    whole update.
    """
    if truth.d != 2:
        raise ValueError("orthogonal_axis_update needs a two-dimensional model")
    if b < 0:
        raise ValueError("b must be non-negative")
    if b == 0.0:
        return 0.0
    m1, _ = in_span_update(truth.density, fitted, float(b), 0.0,
                           float(np.linalg.norm(truth.beta_star)), truth.sigma, 2, spec)
    return m1


def orthogonal_fixed_point(truth: MixtureModel, fitted, lo: float = 1e-3, hi: float = 5.0,
                           grid_points: int = 41, spec: QuadratureSpec | None = None):
    """First nonzero root of ``u(b) - b`` on ``(lo, hi]``, or None when there is none."""
    grid = np.linspace(lo, hi, grid_points)
    h = [orthogonal_axis_update(truth, fitted, b, spec) - b for b in grid]
    for i in range(len(grid) - 1):
        if h[i] == 0.0:
            return float(grid[i])
        if h[i] * h[i + 1] < 0:
            return bisect(lambda b: orthogonal_axis_update(truth, fitted, b, spec) - b,
                          float(grid[i]), float(grid[i + 1]), tol=1e-10)
    return None


def d1_slope(truth: MixtureModel, fitted, step: float | None = None,
             spec: QuadratureSpec | None = None) -> float:
    """Derivative of the orthogonal-axis update at ``b = 0``.

    Central difference with step ``1e-4 sigma``; the update is odd in ``b``
    so ``(u(h) - u(-h)) / 2h = u(h) / h``.
    """
    h = 1e-4 * truth.sigma if step is None else step
    return orthogonal_axis_update(truth, fitted, h, spec) / h


def noncontraction_witness(truth: MixtureModel, fitted, b_bar: float, offset: float = 0.05):
    """Point ``beta`` orthogonal to ``beta*`` whose update moves away from ``beta*``.

    Returns ``(beta, update, dist_before, dist_after)`` at ``b = b_bar - offset*b_bar``.
    """
    from .em import population_update_2d

    bs = np.asarray(truth.beta_star, dtype=float)
    e = np.array([-bs[1], bs[0]]) / np.linalg.norm(bs)
    beta = (1.0 - offset) * b_bar * e
    new = population_update_2d(truth, fitted, beta)
    return beta, new, float(np.linalg.norm(beta - bs)), float(np.linalg.norm(new - bs))


# --------------------------------------------------------------------------
# rates

@dataclass(frozen=True)
class RatePrediction:
    """Order-level iteration and sample-size predictions (hidden constants set to 1)."""

    gamma: float
    c_f_eta: float
    stage1_iters: int
    stage2_iters: int
    samples_per_iter: int
    stage1_samples: int = 0
    stage2_samples: int = 0
    kappa_stage1: float = math.nan
    kappa_stage2: float = math.nan
    label: str = "order-level"


def c_f_of_eta(density: RadialDensity, eta: float) -> float:
    """``max(1, eta^-gamma)`` for the families with a tabulated tail exponent."""
    name = density.kind
    if name == "gaussian":
        return max(1.0, 1.0 / eta ** 2)
    if name in ("laplace", "logistic"):
        return max(1.0, 1.0 / eta)
    gamma = estimate_orlicz_norm(density).gamma
    return max(1.0, eta ** (-gamma))


def stage2_iterations(kappa: float, epsilon: float) -> int:
    return int(math.ceil(math.log(epsilon) / math.log(kappa)))


def predict_rates(family, eta: float, epsilon: float, beta0_over_beta_star: float,
                  delta: float = 0.05, spec: QuadratureSpec = DEFAULT_SPEC) -> RatePrediction:
    """Two-stage iteration and sample predictions at ``sigma = 1``, ``beta* = eta``.

    Stage 1 moves the iterate from ``beta0`` into ``(beta*/2, 3 beta*/2)``;
    stage 2 then contracts at ``kappa(beta*, beta*/2)`` down to relative
    error ``epsilon``.
    """
    if not eta > 0 or not 0 < epsilon < 1:
        raise ValueError("need eta > 0 and 0 < epsilon < 1")
    density = family if isinstance(family, RadialDensity) else make_density(_family_name(family))
    tail = estimate_orlicz_norm(density)
    beta_star = float(eta)
    beta0 = abs(beta0_over_beta_star) * beta_star
    cf_eta = c_f_of_eta(density, eta)
    k2 = kappa_numeric(density, beta_star, 0.5 * beta_star, 1.0, spec).kappa_numeric
    k1 = kappa_numeric(density, beta_star, min(beta0, 0.5 * beta_star), 1.0, spec).kappa_numeric
    if 0.5 * beta_star < beta0 < 1.5 * beta_star:
        stage1 = 0
    elif k1 >= 1.0:
        stage1 = math.inf
    else:
        stage1 = int(math.ceil(math.log(0.25 * beta_star / abs(beta0 - beta_star)) / math.log(k1)))
    stage2 = stage2_iterations(k2, epsilon)
    log_term = math.log(1.0 / delta)
    c_f = tail.c_f_orlicz
    n1 = (1.0 + c_f / eta) ** 2 / (1.0 - k1) ** 2 * log_term if k1 < 1 else math.inf
    n2 = (beta_star + c_f / eta) ** 2 / (epsilon ** 2 * (1.0 - k2) ** 2) * log_term

    def _int(v):
        return v if v == math.inf else int(math.ceil(v))

    return RatePrediction(tail.gamma, cf_eta, _int(stage1), stage2, _int(max(n1, n2)),
                          _int(n1), _int(n2), k1, k2)


# --------------------------------------------------------------------------
# mis-specification

@dataclass(frozen=True)
class MisspecResult:
    beta_bar: float
    error: float
    collapsed: bool
    iterations: int
    converged: bool


def misspecified_fixed_point(truth: MixtureModel, fitted: RadialDensity | None = None,
                             beta0: float = 0.5, tol: float = 1e-10, max_iter: int = 2000,
                             spec: QuadratureSpec = DEFAULT_SPEC) -> MisspecResult:
    """Iterate the update that assumes ``fitted`` (Gaussian by default) on data from ``truth``.

    ``error`` is ``|beta_bar - sign(beta0 beta*) beta*|``; ``collapsed`` flags
    convergence to 0, which happens when the separation is too small.
    """
    if truth.d != 1:
        raise ValueError("misspecified_fixed_point is one-dimensional")
    if beta0 == 0:
        raise ValueError("beta0 must be nonzero")
    fitted = make_density("gaussian") if fitted is None else fitted
    engine = UpdateEngine("population_1d", truth, fitted, spec=spec)
    trace = run_lsem(engine, [beta0], tol=tol, max_iter=max_iter)
    beta_bar = float(trace.final[0])
    bs = float(truth.beta_star[0])
    target = math.copysign(1.0, beta0 * bs) * abs(bs)
    collapsed = abs(beta_bar) < 1e-6 * max(1.0, abs(bs))
    return MisspecResult(beta_bar, abs(beta_bar - target), collapsed, len(trace) - 1,
                         trace.converged)


# --------------------------------------------------------------------------
# finite samples

@dataclass(frozen=True)
class ScalingResult:
    slope: float
    n_grid: tuple
    mean_errors: tuple
    trials: int


def finite_sample_scaling(truth: MixtureModel, fitted, beta: float, n_grid: Sequence[int],
                          trials: int, rng: RngSeed) -> ScalingResult:
    """Least-squares slope of ``log mean |sample update - population update|`` against ``log n``.

    Each ``(n, trial)`` cell draws its own mixture sample from
    ``rng.child(i).child(trial)``.
    """
    n_grid = tuple(int(n) for n in n_grid)
    if len(n_grid) < 2 or max(n_grid) < 1000 * min(n_grid):
        raise ValueError("n_grid must span at least three decades")
    pop = population_update_1d(truth, fitted, beta)
    errors = []
    for i, n in enumerate(n_grid):
        stream = rng.child(i)
        errs = [abs(sample_update(fitted, truth.sigma, [beta],
                                  sample_mixture(truth, n, stream.child(k)))[0] - pop)
                for k in range(trials)]
        errors.append(float(np.mean(errs)))
    slope = float(np.polyfit(np.log(n_grid), np.log(errors), 1)[0])
    return ScalingResult(slope, n_grid, tuple(errors), int(trials))


@dataclass(frozen=True)
class TwoStageResult:
    trace: IterateTrace
    entered_at: int | None
    budget: int
    relative_error: float
    success: bool


def two_stage_trial(truth: MixtureModel, beta0: float, n_per_iter: int, rng: RngSeed,
                    budget_factor: float = 10.0, rel_tol: float = 0.05,
                    prediction: RatePrediction | None = None) -> TwoStageResult:
    """Sample-splitting LS-EM run checked against the order-level stage budgets.

    Success means the iterate enters ``(beta*/2, 3 beta*/2)`` within
    ``budget_factor`` times the predicted stage-1 iteration count and ends
    within relative error ``rel_tol`` of ``beta*``.
    """
    bs = float(truth.beta_star[0])
    if bs == 0.0:
        raise ValueError("beta* must be nonzero")
    if prediction is None:
        prediction = predict_rates(truth.density, abs(bs) / truth.sigma, rel_tol, beta0 / bs)
    budget = int(math.ceil(budget_factor * max(prediction.stage1_iters, 1)))
    stage2 = max(prediction.stage2_iters, 1)
    engine = UpdateEngine("finite_sample", truth, truth.density, n=n_per_iter, rng=rng)

    def inside(value):
        return 0.5 * abs(bs) < math.copysign(1.0, bs) * value < 1.5 * abs(bs)

    beta = np.array([beta0], dtype=float)
    iterates = [beta.copy()]
    entered = 0 if inside(beta0) else None
    t = 0
    # stage 1 stops as soon as the iterate enters the basin; stage 2 runs its full budget
    while entered is None and t < budget:
        beta = engine.step(beta, t)
        t += 1
        iterates.append(beta.copy())
        if inside(beta[0]):
            entered = t
    if entered is not None:
        for _ in range(stage2):
            beta = engine.step(beta, t)
            t += 1
            iterates.append(beta.copy())
    distances = [float(abs(it[0] - bs)) for it in iterates]
    angles = [0.0 if it[0] * bs > 0 else math.pi if it[0] * bs < 0 else math.nan
              for it in iterates]
    trace = IterateTrace(iterates=iterates, distances=distances, angles=angles,
                         converged=entered is not None, target=np.array([bs]))
    rel = abs(beta[0] - bs) / abs(bs)
    success = entered is not None and rel <= rel_tol
    return TwoStageResult(trace, entered, budget, float(rel), bool(success))


def envelope_violation(trace: IterateTrace, kappa: float) -> float:
    """Largest excess of ``|beta^t - target|`` over ``kappa^t |beta^0 - target|`` along a trace."""
    if trace.distances is None:
        raise ValueError("trace has no distance diagnostics")
    d0 = trace.distances[0]
    return max(d - kappa ** t * d0 for t, d in enumerate(trace.distances))
