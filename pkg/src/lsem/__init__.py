"""Least Squares EM for balanced mixtures of rotation-invariant log-concave densities."""
from .analysis import (ContractionReport, FixedPointScan, RatePrediction, angle,
                       fixed_point_scan_1d, kappa_closed_form, kappa_numeric,
                       misspecified_fixed_point, predict_rates)
from .densities import RadialDensity, density_from_spec, estimate_orlicz_norm, make_density, pdf, sample
from .em import (FittedDensitySpec, IterateTrace, UpdateEngine, e_step_weights, f_gap,
                 population_update_1d, population_update_2d, population_update_mc, q_improvement,
                 q_value, run_lsem, sample_update)
from .mixture import MixtureModel, sample_mixture
from .numerics import LSEMError, NumericalError, QuadratureSpec, RngSeed

__version__ = "0.1.0"

__all__ = [
    "ContractionReport", "FixedPointScan", "RatePrediction", "angle", "fixed_point_scan_1d",
    "kappa_closed_form", "kappa_numeric", "misspecified_fixed_point", "predict_rates",
    "RadialDensity", "density_from_spec", "estimate_orlicz_norm", "make_density", "pdf", "sample",
    "FittedDensitySpec", "IterateTrace", "UpdateEngine", "e_step_weights", "f_gap",
    "population_update_1d", "population_update_2d", "population_update_mc", "q_improvement",
    "q_value", "run_lsem", "sample_update", "MixtureModel", "sample_mixture", "LSEMError",
    "NumericalError", "QuadratureSpec", "RngSeed", "__version__",
]
