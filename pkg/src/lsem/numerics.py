"""Deterministic quadrature, bracketing root finding and seeded randomness.

All integrals in the package go through the composite Gauss-Legendre rules
defined here.  The integration domain is split at caller-supplied kink points
(``|x - beta|`` terms make the integrands non-smooth there) and the panels
adjacent to a kink are graded geometrically so that algebraic endpoint
singularities such as ``|x|**1.5`` are still resolved to near machine
precision.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "LSEMError",
    "NumericalError",
    "IntegrationError",
    "BracketError",
    "QuadratureSpec",
    "RngSeed",
    "gauss_legendre_rule",
    "integrate_1d",
    "integrate_nd",
    "tensor_rule",
    "bisect",
]


class LSEMError(Exception):
    """Base class for errors raised by this package."""


class NumericalError(LSEMError):
    """A numerical routine could not produce a trustworthy value."""


class IntegrationError(NumericalError):
    def __init__(self, message: str, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class BracketError(NumericalError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Parameters of the composite Gauss-Legendre rules.

    ``truncation_radius`` and ``panel_width`` are in units of the scale passed
    to the integrator (sigma for location-scale densities).  ``grading_levels``
    controls how many geometrically shrinking panels are placed next to every
    kink point.
    """

    truncation_radius: float = 10.0
    nodes_per_dim: int = 32
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    panel_width: float = 2.0
    grading_levels: int = 8
    max_refinements: int = 3

    def __post_init__(self):
        if not self.truncation_radius >= 10.0:
            raise ValueError("truncation_radius must be >= 10 (units of scale)")
        if self.nodes_per_dim < 32:
            raise ValueError("nodes_per_dim must be >= 32")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.panel_width <= 0:
            raise ValueError("panel_width must be positive")
        if self.grading_levels < 0 or self.max_refinements < 0:
            raise ValueError("grading_levels and max_refinements must be >= 0")

    def tolerance(self, value: float) -> float:
        return max(self.abs_tol, self.rel_tol * abs(value))

    def refined(self) -> "QuadratureSpec":
        """Spec with twice the nodes per panel (used by convergence checks)."""
        return QuadratureSpec(
            truncation_radius=self.truncation_radius,
            nodes_per_dim=2 * self.nodes_per_dim,
            abs_tol=self.abs_tol,
            rel_tol=self.rel_tol,
            panel_width=self.panel_width,
            grading_levels=self.grading_levels,
            max_refinements=self.max_refinements,
        )


# Cheaper defaults for the two/three dimensional tensor rules.
DEFAULT_SPEC = QuadratureSpec()
DEFAULT_SPEC_2D = QuadratureSpec(panel_width=3.0, grading_levels=4, max_refinements=0)
DEFAULT_SPEC_3D = QuadratureSpec(panel_width=6.0, grading_levels=2, max_refinements=0)


_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSeed:
    """A ``(seed, stream_id)`` pair naming one independent random stream.

    Streams are realised with numpy's counter-based Philox generator keyed by
    a ``SeedSequence``; equal pairs always yield bit-identical draws.
    """

    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not (0 <= int(value) <= _MASK64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngSeed":
        """Derive an independent stream, e.g. one per trial or per iteration."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), int(index)))
        stream = int(ss.generate_state(1, dtype=np.uint64)[0])
        return RngSeed(self.seed, stream)


@lru_cache(maxsize=None)
def gauss_legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _breakpoints(lo: float, hi: float, kinks: Sequence[float], panel: float,
                 grading_levels: int) -> np.ndarray:
    near = [k for k in kinks if lo <= k <= hi]
    pts = [lo, hi, *near]
    # geometric grading towards each kink (endpoint kinks are graded one-sided)
    for k in near:
        for level in range(1, grading_levels + 1):
            offset = panel * 4.0 ** (-level)
            pts.extend((k - offset, k + offset))
    pts = np.unique(np.clip(np.asarray(pts, dtype=float), lo, hi))
    # split anything wider than the panel width
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(1, int(np.ceil((b - a) / panel)))
        out.append(np.linspace(a, b, m + 1)[1:])
    return np.concatenate(out)


def _composite_rule(lo, hi, kinks, spec: QuadratureSpec, scale: float, nodes: int):
    breaks = _breakpoints(lo, hi, kinks, spec.panel_width * scale, spec.grading_levels)
    x0, w0 = gauss_legendre_rule(nodes)
    a = breaks[:-1, None]
    half = 0.5 * np.diff(breaks)[:, None]
    x = (a + half * (x0 + 1.0)).ravel()
    w = (half * w0).ravel()
    return x, w


def _check_finite(values: np.ndarray, points) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = int(np.flatnonzero(bad.ravel())[0])
        if isinstance(points, tuple):
            where = tuple(float(np.broadcast_to(p, values.shape).ravel()[idx]) for p in points)
        else:
            where = float(np.asarray(points).ravel()[idx])
        raise IntegrationError(f"integrand is not finite at {where}", abscissa=where)


def integrate_1d(fn: Callable[[np.ndarray], np.ndarray], center: float = 0.0,
                 spec: QuadratureSpec = DEFAULT_SPEC, *, scale: float = 1.0,
                 kinks: Sequence[float] = (), half_width: float | None = None) -> float:
    """Integrate a vectorised ``fn`` over ``[center - w, center + w]``.

    ``w`` defaults to ``spec.truncation_radius * scale``.  The rule is applied
    with ``nodes_per_dim`` points per panel, then with twice as many, and so on
    (at most ``spec.max_refinements`` doublings) until two successive values
    agree within ``max(abs_tol, rel_tol * |value|)``.
    """
    w = spec.truncation_radius * scale if half_width is None else half_width
    lo, hi = center - w, center + w
    prev = None
    nodes = spec.nodes_per_dim
    for _ in range(spec.max_refinements + 2):
        x, wt = _composite_rule(lo, hi, kinks, spec, scale, nodes)
        fx = np.asarray(fn(x), dtype=float)
        _check_finite(fx, x)
        value = float(fx @ wt)
        if prev is not None and abs(value - prev) <= spec.tolerance(value):
            return value
        prev = value
        nodes *= 2
    logger.warning("integrate_1d: tolerance not reached with %d nodes per panel", nodes // 2)
    return value


def tensor_rule(k: int, spec: QuadratureSpec, bounds: Sequence[tuple[float, float]],
                kinks: Sequence[Sequence[float]] | None = None, scale: float = 1.0):
    """Per-axis composite nodes and weights of the k-dimensional product rule."""
    kinks = [()] * k if kinks is None else list(kinks)
    if len(bounds) != k or len(kinks) != k:
        raise ValueError("bounds and kinks must have one entry per dimension")
    return [_composite_rule(lo, hi, kk, spec, scale, spec.nodes_per_dim)
            for (lo, hi), kk in zip(bounds, kinks)]


def integrate_nd(fn: Callable[..., np.ndarray], k: int, spec: QuadratureSpec = DEFAULT_SPEC_2D,
                 *, centers: Sequence[float] | None = None, scale: float = 1.0,
                 kinks: Sequence[Sequence[float]] | None = None,
                 bounds: Sequence[tuple[float, float]] | None = None) -> float:
    """Tensor-product Gauss-Legendre rule in k = 2 or 3 dimensions.

    ``fn`` receives k broadcastable coordinate arrays (an open mesh) and must
    return values of the broadcast shape.  Each axis is handled as in
    :func:`integrate_1d` (kink splitting, grading, truncation), either around
    ``centers`` or over explicit ``bounds``.
    """
    if k not in (2, 3):
        raise ValueError("integrate_nd supports k = 2 or 3 only")
    centers = [0.0] * k if centers is None else list(centers)
    if len(centers) != k:
        raise ValueError("centers must have one entry per dimension")
    w = spec.truncation_radius * scale
    if bounds is None:
        bounds = [(c - w, c + w) for c in centers]
    axes = tensor_rule(k, spec, bounds, kinks, scale)
    grids = np.ix_(*[a[0] for a in axes])
    values = np.broadcast_to(np.asarray(fn(*grids), dtype=float),
                             tuple(len(a[0]) for a in axes))
    _check_finite(values, grids)
    weights = [a[1] for a in axes]
    if k == 2:
        return float(weights[0] @ values @ weights[1])
    return float(np.einsum("ijk,i,j,k->", values, *weights))


def bisect(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12,
           max_iter: int = 200) -> float:
    """Bisection on a sign-changing bracket; returns the bracket midpoint."""
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if not np.isfinite(flo) or not np.isfinite(fhi) or flo * fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f = {flo}, {fhi}")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fm = fn(mid)
        if fm == 0.0:
            return float(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return 0.5 * (lo + hi)
