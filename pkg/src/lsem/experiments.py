"""Experiment runners used by the command line.

Each runner takes a validated :class:`ExperimentConfig` and returns a list of
:class:`Table` objects; writing them to disk is the caller's job.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


from .analysis import (d1_slope, envelope_violation, finite_sample_scaling, fixed_point_scan_1d,
                       kappa_numeric, misspecified_fixed_point, noncontraction_witness,
                       orthogonal_fixed_point)
from .config import ExperimentConfig
from .densities import density_from_spec
from .em import UpdateEngine, population_update_1d, q_improvement, run_lsem
from .mixture import MixtureModel

__all__ = ["Table", "run_experiment"]


@dataclass
class Table:
    filename: str
    header: list
    rows: list
    notes: tuple = ()


def _as_list(value):
    return value if isinstance(value, list) else [value]


def run_converge(cfg: ExperimentConfig) -> list[Table]:
    truth = MixtureModel(cfg.truth(), cfg.beta_star, cfg.sigma)
    mode = cfg.params.get("mode", "population_1d" if cfg.d == 1 else "population_2d")
    engine = UpdateEngine(mode, truth, cfg.fitted(), spec=cfg.quadrature_spec() if cfg.quadrature else None,
                          n=cfg.mc.n, rng=cfg.seeds.rng())
    beta0 = cfg.initial_beta()
    trace = run_lsem(engine, beta0, tol=float(cfg.params.get("tol", 1e-9)),
                     max_iter=int(cfg.params.get("max_iter", 200)),
                     truth_for_diagnostics=truth.beta_star)
    notes = [f"converged={trace.converged}"]
    if cfg.d == 1 and mode == "population_1d":
        kappa = kappa_numeric(truth.density, truth.beta_star[0], beta0[0], cfg.sigma).kappa_numeric
        notes.append(f"envelope_kappa={kappa!r} max_envelope_excess={envelope_violation(trace, kappa)!r}")
    return [Table("trace.csv", trace.header(), list(trace.rows()), tuple(notes))]


def run_kappa_table(cfg: ExperimentConfig) -> list[Table]:
    z_grid = cfg.params.get("z_grid", [0.1 * k for k in range(1, 11)])
    rows = []
    for spec in _as_list(cfg.density):
        dens = density_from_spec(spec)
        for z in z_grid:
            # beta* = z and beta = 2z put z = min(|beta|, |beta*|) at the grid value
            rep = kappa_numeric(dens, float(z), 2.0 * float(z), cfg.sigma)
            rows.append([rep.family, rep.z, rep.sigma, rep.kappa_numeric,
                         "" if rep.kappa_closed_form is None else rep.kappa_closed_form,
                         int(rep.bound_holds),
                         "" if rep.form_discrepancy is None else rep.form_discrepancy])
    header = ["family", "z", "sigma", "kappa_numeric", "kappa_closed_form_bound",
              "bound_holds", "closed_form_variants_gap"]
    return [Table("kappa_table.csv", header, rows)]


def run_fixed_points(cfg: ExperimentConfig) -> list[Table]:
    truth = MixtureModel(cfg.truth(), cfg.beta_star, cfg.sigma)
    fitted = cfg.fitted()
    bs = abs(float(truth.beta_star[0]))
    span = float(cfg.params.get("range_factor", 3.0)) * max(bs, cfg.sigma)
    scan = fixed_point_scan_1d(lambda b: population_update_1d(truth, fitted, b),
                               -span, span, int(cfg.params.get("grid_points", 2000)))
    rows = [[r, lo, hi, res] for r, (lo, hi), res in zip(scan.roots, scan.brackets, scan.residuals)]
    return [Table("fixed_points.csv", ["root", "bracket_lo", "bracket_hi", "residual"], rows,
                  (f"truth={truth.density.label} fitted={fitted.label} scan=[{-span!r}, {span!r}]",))]


def run_noncontraction(cfg: ExperimentConfig) -> list[Table]:
    rows = []
    r_grid = cfg.params.get("r_grid")
    specs = [{"polynomial": r} for r in r_grid] if r_grid else _as_list(cfg.density)
    for spec in specs:
        dens = density_from_spec(spec)
        truth = MixtureModel(dens, cfg.beta_star, cfg.sigma)
        slope = d1_slope(truth, dens)
        b_bar = orthogonal_fixed_point(truth, dens)
        before = after = math.nan
        if b_bar is not None:
            _, _, before, after = noncontraction_witness(truth, dens, b_bar)
        rows.append([dens.label, slope, "" if b_bar is None else b_bar, before, after,
                     int(after > before)])
    header = ["family", "orthogonal_slope_at_zero", "orthogonal_fixed_point",
              "witness_dist_before", "witness_dist_after", "moves_away"]
    return [Table("noncontraction.csv", header, rows)]


def run_finite_sample(cfg: ExperimentConfig) -> list[Table]:
    truth = MixtureModel(cfg.truth(), cfg.beta_star, cfg.sigma)
    beta = float(cfg.params.get("beta", 0.5 * truth.beta_star[0]))
    res = finite_sample_scaling(truth, cfg.fitted(), beta, cfg.params.get("n_grid", [1000, 10000, 100000]),
                                cfg.mc.trials, cfg.seeds.rng())
    rows = [[n, e] for n, e in zip(res.n_grid, res.mean_errors)]
    return [Table("scaling.csv", ["n", "mean_abs_error"], rows,
                  (f"loglog_slope={res.slope!r} trials={res.trials}",))]


def run_misspec(cfg: ExperimentConfig) -> list[Table]:
    beta_grid = cfg.params.get("beta_grid", [0.25 * k for k in range(1, 13)])
    beta0_list = cfg.params.get("beta0_list", [float(cfg.initial_beta()[0])])
    curve, fixed = [], []
    for tspec in _as_list(cfg.density):
        tdens = density_from_spec(tspec)
        truth = MixtureModel(tdens, cfg.beta_star, cfg.sigma)
        for fspec in _as_list(cfg.fitted_density):
            fdens = density_from_spec(fspec)
            for b in beta_grid:
                curve.append([tdens.label, fdens.label, float(b),
                              population_update_1d(truth, fdens, float(b))])
            for b0 in beta0_list:
                res = misspecified_fixed_point(truth, fdens, float(b0))
                fixed.append([tdens.label, fdens.label, float(b0), res.beta_bar, res.error,
                              int(res.collapsed), int(res.converged)])
    return [Table("misspec.csv", ["truth", "fitted", "beta", "beta_plus"], curve),
            Table("misspec_fixed_points.csv",
                  ["truth", "fitted", "beta0", "beta_bar", "distance_to_signed_truth",
                   "collapsed_to_zero", "converged"], fixed)]


def run_qcheck(cfg: ExperimentConfig) -> list[Table]:
    truth = MixtureModel(cfg.truth(), cfg.beta_star, cfg.sigma)
    fitted = cfg.fitted()
    rows = []
    for b in cfg.params.get("beta_grid", [0.1, 0.5, 0.8, 1.2, 1.5]):
        b = float(b)
        new = population_update_1d(truth, fitted, b)
        gain = q_improvement(truth, b, new, fitted=fitted)
        rows.append([b, new, gain, int(gain > 0)])
    return [Table("qcheck.csv", ["beta", "beta_plus", "q_gain", "improved"], rows)]


_RUNNERS = {
    "converge": run_converge,
    "kappa_table": run_kappa_table,
    "fixed_points": run_fixed_points,
    "noncontraction": run_noncontraction,
    "finite_sample": run_finite_sample,
    "misspec": run_misspec,
    "qcheck": run_qcheck,
}


def run_experiment(cfg: ExperimentConfig) -> list[Table]:
    return _RUNNERS[cfg.experiment](cfg)
