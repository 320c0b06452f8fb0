"""Experiment configuration: YAML parsing and validation."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .densities import DensityError, density_from_spec
from .numerics import LSEMError, QuadratureSpec, RngSeed

__all__ = ["ConfigError", "ExperimentConfig", "EXPERIMENTS", "load_config", "parse_config"]

EXPERIMENTS = ("converge", "kappa_table", "fixed_points", "noncontraction", "finite_sample",
               "misspec", "qcheck")

_RANDOM = re.compile(r"^random\((\d+)\)$")


class ConfigError(LSEMError):
    """Invalid configuration; ``errors`` lists ``(field, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        lines = "\n".join(f"  {k}: {v}" for k, v in self.errors)
        super().__init__(f"invalid configuration:\n{lines}")


@dataclass(frozen=True)
class MCSettings:
    n: int = 100_000
    trials: int = 10


@dataclass(frozen=True)
class SeedSettings:
    seed: int = 0
    stream_id: int = 0

    def rng(self) -> RngSeed:
        return RngSeed(self.seed, self.stream_id)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run.

    ``density`` and ``fitted_density`` hold raw density specs (``"laplace"``,
    ``{"polynomial": 3}``); ``params`` carries experiment-specific knobs such
    as grids, iteration limits or the engine mode.
    """

    experiment: str
    density: Any = "gaussian"
    fitted_density: Any = None
    beta_star: tuple = (1.0,)
    sigma: float = 1.0
    beta0: Any = (0.1,)
    quadrature: dict = field(default_factory=dict)
    mc: MCSettings = field(default_factory=MCSettings)
    seeds: SeedSettings = field(default_factory=SeedSettings)
    output_dir: str = "results"
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.beta_star)

    def quadrature_spec(self) -> QuadratureSpec:
        return QuadratureSpec(**self.quadrature)

    def truth(self):
        return density_from_spec(self.density)

    def fitted(self):
        return density_from_spec(self.fitted_density if self.fitted_density is not None
                                 else self.density)

    def initial_beta(self) -> np.ndarray:
        """``beta0`` as a vector; ``"random(k)"`` draws a Gaussian vector from stream k."""
        if isinstance(self.beta0, str):
            k = int(_RANDOM.match(self.beta0).group(1))
            return RngSeed(k).generator().standard_normal(self.d)
        return np.asarray(self.beta0, dtype=float)

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None):
        out = self
        if seed is not None:
            out = _replace(out, seeds=SeedSettings(int(seed), out.seeds.stream_id))
        if output_dir is not None:
            out = _replace(out, output_dir=str(output_dir))
        return out

    def canonical(self) -> dict:
        data = asdict(self)
        data["beta_star"] = list(self.beta_star)
        if not isinstance(self.beta0, str):
            data["beta0"] = list(self.beta0)
        data.pop("output_dir")
        return data

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    values.update(changes)
    return ExperimentConfig(**values)


def _vector(value, name, errors):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        errors.append((name, "must be a number or a list of numbers"))
        return None
    if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
        errors.append((name, "must be a nonempty list of finite numbers"))
        return None
    return tuple(float(v) for v in arr)


def _density(spec, name, errors):
    try:
        density_from_spec(spec)
    except (DensityError, TypeError, ValueError) as exc:
        errors.append((name, str(exc)))


def _density_list(value, name, errors):
    items = value if isinstance(value, list) else [value]
    for i, item in enumerate(items):
        _density(item, f"{name}[{i}]", errors)


_KNOWN = {f.name for f in fields(ExperimentConfig)}


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed YAML mapping, collecting every problem before raising."""
    errors: list[tuple[str, str]] = []
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a mapping")])
    for key in raw:
        if key not in _KNOWN:
            errors.append((str(key), "unknown field"))
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        errors.append(("experiment", f"must be one of {', '.join(EXPERIMENTS)}"))

    density = raw.get("density", "gaussian")
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        errors.append(("params", "must be a mapping"))
        params = {}
    multi_truth = experiment == "misspec" or experiment == "kappa_table"
    if multi_truth:
        _density_list(density, "density", errors)
    else:
        _density(density, "density", errors)
    fitted = raw.get("fitted_density")
    if experiment == "misspec" and fitted is None:
        errors.append(("fitted_density", "required for the misspec experiment"))
    if fitted is not None:
        (_density_list if experiment == "misspec" else _density)(fitted, "fitted_density", errors)

    beta_star = _vector(raw.get("beta_star", [1.0]), "beta_star", errors)
    sigma = raw.get("sigma", 1.0)
    if not isinstance(sigma, (int, float)) or isinstance(sigma, bool) or not sigma > 0:
        errors.append(("sigma", "must be a positive number"))

    beta0 = raw.get("beta0")
    if beta0 is None:
        # default start: a tenth of the way towards beta*
        beta0 = tuple(0.1 * b for b in beta_star) if beta_star is not None else (0.1,)
    elif isinstance(beta0, str):
        if not _RANDOM.match(beta0.strip()):
            errors.append(("beta0", "must be a vector or 'random(<seed>)'"))
        beta0 = beta0.strip()
    else:
        beta0 = _vector(beta0, "beta0", errors)
        if beta0 is not None and beta_star is not None and len(beta0) != len(beta_star):
            errors.append(("beta0", "dimension differs from beta_star"))

    quad = raw.get("quadrature") or {}
    if not isinstance(quad, dict):
        errors.append(("quadrature", "must be a mapping"))
        quad = {}
    else:
        qnames = {f.name for f in fields(QuadratureSpec)}
        bad = [k for k in quad if k not in qnames]
        for k in bad:
            errors.append((f"quadrature.{k}", "unknown quadrature setting"))
        if not bad:
            try:
                QuadratureSpec(**quad)
            except (TypeError, ValueError) as exc:
                errors.append(("quadrature", str(exc)))

    mc_raw = raw.get("mc") or {}
    mc = MCSettings()
    if not isinstance(mc_raw, dict):
        errors.append(("mc", "must be a mapping with n and trials"))
    else:
        for key in mc_raw:
            if key not in ("n", "trials"):
                errors.append((f"mc.{key}", "unknown field"))
        n, trials = mc_raw.get("n", mc.n), mc_raw.get("trials", mc.trials)
        if not isinstance(n, int) or n < 1:
            errors.append(("mc.n", "must be a positive integer"))
        if not isinstance(trials, int) or trials < 1:
            errors.append(("mc.trials", "must be a positive integer"))
        if isinstance(n, int) and isinstance(trials, int):
            mc = MCSettings(n, trials)

    seeds_raw = raw.get("seeds") or {}
    seeds = SeedSettings()
    if not isinstance(seeds_raw, dict):
        errors.append(("seeds", "must be a mapping with seed and stream_id"))
    else:
        s, sid = seeds_raw.get("seed", 0), seeds_raw.get("stream_id", 0)
        if not isinstance(s, int) or s < 0:
            errors.append(("seeds.seed", "must be a non-negative integer"))
        if not isinstance(sid, int) or sid < 0:
            errors.append(("seeds.stream_id", "must be a non-negative integer"))
        if isinstance(s, int) and isinstance(sid, int):
            seeds = SeedSettings(s, sid)

    output_dir = raw.get("output_dir", "results")
    if not isinstance(output_dir, str):
        errors.append(("output_dir", "must be a path string"))

    if experiment == "converge":
        mode = params.get("mode", "population_1d" if beta_star and len(beta_star) == 1
                          else "population_2d")
        if mode not in ("population_1d", "population_2d", "monte_carlo", "finite_sample"):
            errors.append(("params.mode", "unknown engine mode"))
        elif beta_star is not None and mode == "population_1d" and len(beta_star) != 1:
            errors.append(("params.mode", "population_1d needs a one-dimensional beta_star"))
        elif beta_star is not None and mode == "population_2d" and len(beta_star) < 2:
            errors.append(("params.mode", "population_2d needs d >= 2"))
    if experiment in ("fixed_points", "qcheck", "finite_sample", "misspec") and beta_star is not None \
            and len(beta_star) != 1:
        errors.append(("beta_star", f"the {experiment} experiment is one-dimensional"))
    if experiment == "noncontraction" and beta_star is not None and len(beta_star) != 2:
        errors.append(("beta_star", "the noncontraction experiment is two-dimensional"))
    if experiment == "finite_sample":
        grid = params.get("n_grid", [1000, 10000, 100000])
        if not (isinstance(grid, list) and all(isinstance(v, int) and v > 0 for v in grid)
                and len(grid) >= 2 and max(grid) >= 1000 * min(grid)):
            errors.append(("params.n_grid", "must list positive integers spanning three decades"))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        experiment=experiment,
        density=density,
        fitted_density=fitted,
        beta_star=beta_star,
        sigma=float(sigma),
        beta0=beta0,
        quadrature=dict(quad),
        mc=mc,
        seeds=seeds,
        output_dir=output_dir,
        params=dict(params),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {path}: {exc.strerror}")]) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"not valid YAML: {exc}")]) from exc
    return parse_config(raw)
