"""Rotation-invariant log-concave densities with unit coordinate variance.

A density is stored through its *unit shape* ``h(u)``, a convex increasing
function with ``h(0) = 0``.  In dimension ``d`` the calibrated log-density is
``g_d(t) = h(t / s_d)`` where the scale ``s_d`` is chosen so that every
coordinate of ``X ~ f`` has variance one, i.e. ``E ||X||^2 = d``.  The scale
depends on ``d`` for every family except the Gaussian (e.g. the Laplace
shape needs ``s_d = 1 / sqrt(d + 1)``), so all quantities are cached per
dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from .numerics import (DEFAULT_SPEC, IntegrationError, LSEMError, NumericalError, QuadratureSpec,
                       RngSeed, bisect, gauss_legendre_rule, integrate_1d)

__all__ = [
    "DensityError",
    "RadialDensity",
    "TailRate",
    "make_density",
    "density_from_spec",
    "pdf",
    "sample",
    "estimate_orlicz_norm",
    "NAMED_FAMILIES",
]

NAMED_FAMILIES = ("gaussian", "laplace", "logistic")
_TABLE_KNOTS = 4096


class DensityError(LSEMError):
    """Invalid density construction (domain, monotonicity or convexity)."""


def _logistic_shape(u):
    a = np.abs(u)
    return a + 2.0 * np.log1p(np.exp(-a)) - 2.0 * math.log(2.0)


def _logistic_prime(u):
    return np.tanh(0.5 * np.asarray(u, dtype=float))


def _central_difference(fn: Callable, step: float = 1e-6) -> Callable:
    def prime(u):
        u = np.asarray(u, dtype=float)
        lo = np.maximum(u - step, 0.0)
        return (fn(u + step) - fn(lo)) / (u + step - lo)
    return prime


@dataclass(frozen=True)
class TailRate:
    gamma: float
    c_f_orlicz: float


@dataclass(frozen=True, eq=False)
class RadialDensity:
    """A member of the rotation-invariant log-concave family.

    Use :func:`make_density` to build one; it validates the shape and
    calibrates the variance.  With ``unit_variance=False`` the shape is used
    as given (``g_d = h``), which is how raw profiles such as ``|x|^r`` are
    compared against each other.  ``scale_sigma0`` is the one-dimensional
    calibration scale (``1/sqrt(2)`` for Laplace, ``sqrt(3)/pi`` for
    Logistic).
    """

    kind: str
    shape: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    shape_prime: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    r: float | None = None
    name: str = ""
    unit_variance: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- calibration -----------------------------------------------------
    def _radial(self, d: int) -> dict:
        key = ("radial", d)
        if key not in self._cache:
            self._cache[key] = _radial_table(self.shape, d, self.unit_variance)
        return self._cache[key]

    def scale(self, d: int = 1) -> float:
        """Calibration scale ``s_d`` making the coordinate variance one."""
        return self._radial(d)["scale"]

    @property
    def scale_sigma0(self) -> float:
        return self.scale(1)

    def log_norm_const(self, d: int = 1) -> float:
        """``log C_g`` for the calibrated density in dimension d."""
        return self._radial(d)["log_norm"]

    def g(self, t, d: int = 1):
        """Calibrated log-density profile ``g_d(t)``."""
        return self.shape(np.asarray(t, dtype=float) / self.scale(d))

    def g_prime(self, t, d: int = 1):
        s = self.scale(d)
        return self.shape_prime(np.asarray(t, dtype=float) / s) / s

    def support_radius(self, d: int = 1) -> float:
        """Radius (in units of sigma) beyond which the radial mass is below 1e-16."""
        return self._radial(d)["support"]

    def radial_cdf(self, t, d: int = 1):
        """CDF of ``||X||`` for the calibrated density."""
        tab = self._radial(d)
        u = np.asarray(t, dtype=float) / tab["scale"]
        return np.interp(u, tab["knots"], tab["cdf"], right=1.0)

    def radial_quantile(self, p, d: int = 1):
        tab = self._radial(d)
        return tab["scale"] * tab["inverse"](np.asarray(p, dtype=float))

    @property
    def label(self) -> str:
        return self.name or self.kind

    def __repr__(self) -> str:
        return f"RadialDensity({self.label!r})"


def _radial_extent(shape: Callable, d: int) -> float:
    # point beyond which t^(d+2) exp(-h(t)) is negligible
    t = 1.0
    while float(shape(np.array([t]))[0]) - (d + 2) * math.log(t) < 90.0:
        t *= 1.25
        if t > 1e6:
            raise DensityError("density tail decays too slowly to tabulate")
    return t


def _radial_table(shape: Callable, d: int, unit_variance: bool = True) -> dict:
    t_max = _radial_extent(shape, d)
    spec = QuadratureSpec(truncation_radius=10.0, panel_width=max(t_max / 40.0, 0.5))

    def moment(k):
        return integrate_1d(lambda t: t ** (d - 1 + k) * np.exp(-shape(t)),
                            center=0.5 * t_max, spec=spec, kinks=(0.0,),
                            half_width=0.5 * t_max)

    m0, m2 = moment(0), moment(2)
    if not (m0 > 0 and m2 > 0 and np.isfinite(m0) and np.isfinite(m2)):
        raise DensityError("radial moments are not finite")
    scale = math.sqrt(d * m0 / m2) if unit_variance else 1.0
    log_ball = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)
    log_norm = d * math.log(scale) + math.log(m0) + math.log(d) + log_ball

    # tabulated radial CDF on log-spaced knots, segment masses by 16-pt Gauss-Legendre
    knots = np.concatenate(([0.0], np.geomspace(t_max * 1e-7, t_max, _TABLE_KNOTS - 1)))
    x0, w0 = gauss_legendre_rule(16)
    a, b = knots[:-1, None], knots[1:, None]
    nodes = 0.5 * (b - a) * (x0 + 1.0) + a
    dens = nodes ** (d - 1) * np.exp(-shape(nodes))
    masses = (0.5 * (b - a)[:, 0]) * (dens @ w0)
    total = masses.sum()
    masses /= total
    cdf = np.concatenate(([0.0], np.cumsum(masses)))
    tail = np.concatenate((np.cumsum(masses[::-1])[::-1], [0.0]))
    cdf = np.minimum(cdf, 1.0)
    keep = np.concatenate(([True], np.diff(cdf) > 0))
    inverse = PchipInterpolator(cdf[keep], knots[keep], extrapolate=True)
    idx = np.flatnonzero(tail < 1e-16)
    support_unit = knots[idx[0]] if idx.size else t_max
    return {
        "scale": scale,
        "log_norm": log_norm,
        "knots": knots,
        "cdf": cdf,
        "inverse": inverse,
        "support": max(support_unit * scale, 1.0),
        "t_max": t_max,
    }


def _validate_shape(shape: Callable, prime: Callable) -> None:
    if abs(float(shape(np.array([0.0]))[0])) > 1e-12:
        raise DensityError("g(0) must be 0")
    t = np.linspace(0.0, 20.0, 4001)
    h = np.asarray(shape(t), dtype=float)
    if not np.all(np.isfinite(h)):
        raise DensityError("g is not finite on [0, 20]")
    if np.any(np.diff(h) < -1e-12) or h[-1] <= h[0]:
        raise DensityError("g must be nondecreasing and strictly increasing overall")
    # midpoint convexity with slack
    if np.any(h[1:-1] - 0.5 * (h[:-2] + h[2:]) > 1e-9):
        raise DensityError("g must be convex")
    p = np.asarray(prime(t[1:]), dtype=float)
    if not np.all(np.isfinite(p)):
        raise DensityError("g' is not finite")


def make_density(kind: str, r: float | None = None, g: Callable | None = None,
                 g_prime: Callable | None = None, unit_variance: bool = True) -> RadialDensity:
    """Build a calibrated density.

    ``kind`` is one of ``gaussian``, ``laplace``, ``logistic``,
    ``polynomial`` (needs ``r >= 1``) or ``custom`` (needs ``g``; its
    derivative defaults to central differences).  ``unit_variance=False``
    skips the variance calibration.
    """
    kind = kind.lower()
    if kind == "gaussian":
        shape, prime, name = (lambda u: 0.5 * np.square(u)), (lambda u: np.asarray(u, float)), ""
    elif kind == "laplace":
        shape = lambda u: np.abs(np.asarray(u, dtype=float))  # noqa: E731
        prime = lambda u: np.ones_like(np.asarray(u, dtype=float))  # noqa: E731
        name = ""
    elif kind == "logistic":
        shape, prime, name = _logistic_shape, _logistic_prime, ""
    elif kind == "polynomial":
        if r is None or not np.isfinite(r) or r < 1:
            raise DensityError(f"polynomial exponent must satisfy r >= 1, got {r}")
        r = float(r)
        shape = lambda u: np.abs(np.asarray(u, dtype=float)) ** r  # noqa: E731
        prime = lambda u: r * np.abs(np.asarray(u, dtype=float)) ** (r - 1.0)  # noqa: E731
        name = f"poly({r:g})" if unit_variance else f"raw_poly({r:g})"
    elif kind == "custom":
        if g is None:
            raise DensityError("custom densities need a log-density profile g")
        user_g = g
        shape = lambda u: np.asarray(user_g(np.asarray(u, dtype=float)), dtype=float)  # noqa: E731
        prime = g_prime if g_prime is not None else _central_difference(shape)
        name = "custom"
    else:
        raise DensityError(f"unknown density kind {kind!r}")
    _validate_shape(shape, prime)
    dens = RadialDensity(kind=kind, shape=shape, shape_prime=prime,
                         r=r if kind == "polynomial" else None, name=name,
                         unit_variance=bool(unit_variance))
    dens.scale(1)  # calibrate eagerly so construction errors surface here
    return dens


def density_from_spec(spec) -> RadialDensity:
    """Parse a config block.

    Accepted forms: ``"laplace"``, ``{"polynomial": 3}``, ``{"raw_polynomial": 3}``
    (the uncalibrated profile ``|x|^3``) and ``{"kind": "polynomial", "r": 3,
    "unit_variance": false}``.
    """
    if isinstance(spec, RadialDensity):
        return spec
    if isinstance(spec, str):
        return make_density(spec)
    if isinstance(spec, Mapping) and len(spec) == 1:
        (key, value), = spec.items()
        key = str(key).lower()
        if key in ("polynomial", "raw_polynomial"):
            try:
                r = float(value)
            except (TypeError, ValueError):
                raise DensityError(f"polynomial exponent must be a number, got {value!r}") from None
            return make_density("polynomial", r=r, unit_variance=key == "polynomial")
    if isinstance(spec, Mapping) and "kind" in spec:
        extra = set(spec) - {"kind", "r", "unit_variance"}
        if not extra:
            r = spec.get("r")
            return make_density(str(spec["kind"]), r=None if r is None else float(r),
                                unit_variance=bool(spec.get("unit_variance", True)))
    raise DensityError(f"cannot parse density spec {spec!r}")


def pdf(density: RadialDensity, x, beta=None, sigma: float = 1.0):
    """Location-scale density ``sigma^-d f((x - beta) / sigma)``.

    ``x`` has shape ``(..., d)``.  A scalar, or a 1-d array when ``beta`` is
    omitted or scalar, is read as one-dimensional points.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    one_dim = beta is None or np.size(beta) == 1
    if x.ndim == 0 or (one_dim and x.ndim == 1):
        x = x[..., None]
    d = x.shape[-1]
    beta = np.zeros(d) if beta is None else np.reshape(np.asarray(beta, dtype=float), (d,))
    t = np.linalg.norm(x - beta, axis=-1) / sigma
    return np.exp(-density.g(t, d) - density.log_norm_const(d)) / sigma ** d


def sample(density: RadialDensity, d: int, n: int, rng: RngSeed | np.random.Generator) -> np.ndarray:
    """Draw ``n`` points of the calibrated d-dimensional density, shape ``(n, d)``.

    The radius comes from the tabulated radial CDF (monotone cubic inverse),
    the direction is uniform on the sphere.
    """
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    gen = rng.generator() if isinstance(rng, RngSeed) else rng
    radius = density.radial_quantile(gen.random(n), d)
    if d == 1:
        direction = np.where(gen.random(n) < 0.5, -1.0, 1.0)[:, None]
    else:
        direction = gen.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return radius[:, None] * direction


def _tail_exponent(density: RadialDensity) -> float:
    if density.kind == "gaussian":
        return 2.0
    if density.kind in ("laplace", "logistic"):
        return 1.0
    if density.kind == "polynomial":
        return float(density.r)
    t1, t2 = 50.0, 100.0
    h1, h2 = density.shape(np.array([t1, t2]))
    return float(math.log(h2 / h1) / math.log(t2 / t1))


def abs_mgf(density: RadialDensity, K: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``E exp(|X| / K)`` for the calibrated one-dimensional density (``inf`` if divergent)."""
    log_c = density.log_norm_const(1)

    def integrand(x):
        with np.errstate(over="ignore"):
            return 2.0 * np.exp(x / K - density.g(x, 1) - log_c)

    width = density.support_radius(1)
    prev = None
    while width < 1e4:
        try:
            value = integrate_1d(integrand, center=0.5 * width, spec=spec, kinks=(0.0,),
                                 half_width=0.5 * width)
        except IntegrationError:
            return math.inf
        if prev is not None and abs(value - prev) <= 1e-12 * max(1.0, value):
            return value
        prev = value
        width *= 2.0
    return math.inf


def estimate_orlicz_norm(density: RadialDensity) -> TailRate:
    """Smallest K with ``E exp(|X|/K) <= 2`` (the psi_1 Orlicz norm); cached per density."""
    if "orlicz" in density._cache:
        return density._cache["orlicz"]

    def excess(K):
        v = abs_mgf(density, K)
        return min(v, 1e300) - 2.0

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e3:
            raise NumericalError("Orlicz norm search failed: E exp(|X|/K) > 2 for all K <= 1e3")
    lo = hi / 2.0
    while excess(lo) <= 0:
        hi, lo = lo, lo / 2.0
        if lo < 1e-6:
            raise NumericalError("Orlicz norm search failed near K = 0")
    k = bisect(excess, lo, hi, tol=1e-10)
    rate = TailRate(gamma=_tail_exponent(density), c_f_orlicz=k)
    density._cache["orlicz"] = rate
    return rate
