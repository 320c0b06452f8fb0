"""The balanced two-component location mixture and its sampler."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .densities import RadialDensity, pdf, sample
from .numerics import RngSeed

__all__ = ["MixtureModel", "LabeledSample", "sample_mixture", "mixture_pdf", "snr",
           "write_dataset_csv"]


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """``0.5 f_{beta*, sigma} + 0.5 f_{-beta*, sigma}`` in dimension d."""

    density: RadialDensity
    beta_star: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.beta_star, dtype=float)).copy()
        if b.ndim != 1 or b.size < 1:
            raise ValueError("beta_star must be a vector")
        if not np.all(np.isfinite(b)):
            raise ValueError("beta_star must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "beta_star", b)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return self.beta_star.size

    def with_beta_star(self, beta_star) -> "MixtureModel":
        return MixtureModel(self.density, beta_star, self.sigma)


@dataclass(frozen=True)
class LabeledSample:
    """Points ``x`` (shape ``(n, d)``) with hidden labels ``z`` in {1, 2}."""

    x: np.ndarray
    z: np.ndarray

    def __len__(self) -> int:
        return len(self.z)


def snr(model: MixtureModel) -> float:
    return float(np.linalg.norm(model.beta_star) / model.sigma)


def sample_mixture(model: MixtureModel, n: int, rng: RngSeed | np.random.Generator) -> LabeledSample:
    """``x = +/- beta* + sigma E`` with a fair coin choosing the sign."""
    gen = rng.generator() if isinstance(rng, RngSeed) else rng
    z = np.where(gen.random(n) < 0.5, 1, 2)
    noise = sample(model.density, model.d, n, gen)
    sign = np.where(z == 1, 1.0, -1.0)[:, None]
    return LabeledSample(x=sign * model.beta_star + model.sigma * noise, z=z)


def mixture_pdf(model: MixtureModel, x):
    x = np.asarray(x, dtype=float)
    if model.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return 0.5 * (pdf(model.density, x, model.beta_star, model.sigma)
                  + pdf(model.density, x, -model.beta_star, model.sigma))


def write_dataset_csv(data: LabeledSample, path=None) -> str:
    """Dump ``x_1,...,x_d,z`` rows; returns the text and writes it if ``path`` is given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    d = data.x.shape[1]
    writer.writerow([f"x_{j + 1}" for j in range(d)] + ["z"])
    for row, label in zip(data.x, data.z):
        writer.writerow([repr(float(v)) for v in row] + [int(label)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
