import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.special import expit

from conftest import FAMILIES, density, family
from lsem.analysis import angle
from lsem.em import (DivergenceError, FittedDensitySpec, UpdateEngine, e_step_weights, f_gap,
                     population_update_1d, population_update_2d, population_update_mc, q_improvement,
                     q_value, run_lsem, sample_update)
from lsem.mixture import MixtureModel, sample_mixture
from lsem.numerics import LSEMError, RngSeed

family_names = st.sampled_from(sorted(FAMILIES))


def gaussian_update_reference(beta_star, beta, sigma):
    """E_{X ~ N(beta*, sigma^2)} X tanh(beta X / sigma^2) by adaptive scipy quadrature."""
    def f(x):
        return x * math.tanh(beta * x / sigma ** 2) * math.exp(-0.5 * ((x - beta_star) / sigma) ** 2)
    val, _ = integrate.quad(f, -math.inf, math.inf, epsabs=1e-13, epsrel=1e-13, limit=200)
    return val / (sigma * math.sqrt(2 * math.pi))


# --- E-step --------------------------------------------------------------

@given(st.floats(-5, 5), st.floats(0.25, 4))
def test_weights_at_zero_beta_are_half(x, sigma):
    p1, p2 = e_step_weights(density("laplace"), 0.0, sigma, x)
    assert p1 == 0.5 and p2 == 0.5


def test_weights_for_orthogonal_points_are_half():
    x = np.array([[0.0, 3.0], [0.0, -1.0]])
    p1, p2 = e_step_weights(density("logistic"), [2.0, 0.0], 1.0, x)
    np.testing.assert_allclose(p1, 0.5, atol=1e-15)


@given(st.floats(-3, 3), st.floats(-8, 8), st.floats(0.25, 4))
def test_gaussian_weights_closed_form(beta, x, sigma):
    p1, p2 = e_step_weights(density("gaussian"), beta, sigma, x)
    assert p1 == pytest.approx(expit(2 * beta * x / sigma ** 2), abs=1e-12)
    assert p1 + p2 == pytest.approx(1.0, abs=1e-15)


def test_weights_survive_extreme_gaps():
    p1, p2 = e_step_weights(density("gaussian"), 50.0, 0.25, np.array([-40.0, 40.0]))
    assert np.all(np.isfinite(p1)) and p1[0] == 0.0 and p1[1] == 1.0


@given(family_names, st.floats(-3, 3), st.floats(-6, 6), st.floats(0.25, 4))
def test_gap_is_odd_in_x(name, beta, x, sigma):
    dens = family(name)
    assert f_gap(dens, beta, sigma, x) == pytest.approx(-f_gap(dens, beta, sigma, -x), abs=1e-12)
    assert f_gap(dens, 0.0, sigma, x) == 0.0


def test_gaussian_gap_closed_form():
    x = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(f_gap(density("gaussian"), 0.7, 1.0, x), 1.4 * x, atol=1e-14)
    assert f_gap(FittedDensitySpec(density("gaussian")), [0.7], 1.0, [[2.0]]).shape == (1,)


# --- one-dimensional population update ------------------------------------

@given(family_names, st.floats(0.1, 5), st.floats(0.25, 4))
def test_self_consistency(name, beta, sigma):
    dens = family(name)
    m = MixtureModel(dens, [beta], sigma)
    assert abs(population_update_1d(m, dens, beta) - beta) <= 1e-8


def test_zero_maps_to_zero():
    m = MixtureModel(density("laplace"), [1.0], 1.0)
    assert population_update_1d(m, density("laplace"), 0.0) == 0.0


@pytest.mark.parametrize("bs,b,s", [(1.0, 0.5, 1.0), (2.0, 0.3, 0.5), (0.5, 3.0, 2.0), (1.0, -0.7, 1.0)])
def test_gaussian_update_matches_adaptive_reference(bs, b, s):
    g = density("gaussian")
    value = population_update_1d(MixtureModel(g, [bs], s), g, b)
    assert value == pytest.approx(gaussian_update_reference(bs, b, s), abs=1e-11)


def test_gaussian_anchor_contracts_within_closed_form_bound():
    g = density("gaussian")
    v = population_update_1d(MixtureModel(g, [1.0], 1.0), g, 0.5)
    assert abs(v - 1.0) <= 0.5 * math.exp(-0.125)


@given(family_names, st.floats(0.1, 4), st.floats(0.05, 4), st.floats(0.5, 2))
def test_update_is_odd_and_sign_preserving(name, bs, b, sigma):
    dens = family(name)
    m, flipped = MixtureModel(dens, [bs], sigma), MixtureModel(dens, [-bs], sigma)
    up = population_update_1d(m, dens, b)
    assert population_update_1d(m, dens, -b) == pytest.approx(-up, abs=1e-12)
    assert population_update_1d(flipped, dens, b) == pytest.approx(up, abs=1e-10)
    assert up > 0


# --- two-dimensional reduction ---------------------------------------------

def gaussian_2d_reference(beta_star, b, sigma=1.0):
    """For Gaussians the tanh weight depends on x1 only, so both coordinates are 1-d integrals."""
    b1, b2 = beta_star

    def expect(fn):
        val, _ = integrate.quad(lambda x: fn(x) * math.exp(-0.5 * ((x - b1) / sigma) ** 2),
                                -math.inf, math.inf, epsabs=1e-13, epsrel=1e-13)
        return val / (sigma * math.sqrt(2 * math.pi))

    m1 = expect(lambda x: x * math.tanh(b * x / sigma ** 2))
    m2 = b2 * expect(lambda x: math.tanh(b * x / sigma ** 2))
    return np.array([m1, m2])


@pytest.mark.parametrize("bs,b", [((1.0, 0.0), 0.5), ((0.5, 1.2), 0.8), ((-0.3, 0.4), 2.0)])
def test_two_dimensional_gaussian_matches_reference(bs, b):
    g = density("gaussian")
    got = population_update_2d(MixtureModel(g, bs, 1.0), g, [b, 0.0])
    np.testing.assert_allclose(got, gaussian_2d_reference(bs, b), atol=1e-10)


def test_parallel_and_orthogonal_inputs_stay_in_their_line():
    dens = density("laplace")
    m = MixtureModel(dens, [1.0, 0.0], 1.0)
    par = population_update_2d(m, dens, [0.4, 0.0])
    orth = population_update_2d(m, dens, [0.0, 0.4])
    assert abs(par[1]) < 1e-14 and par[0] > 0
    assert abs(orth[0]) < 1e-12 and orth[1] > 0


def test_gaussian_angle_example():
    g = density("gaussian")
    m = MixtureModel(g, [1.0, 0.0], 1.0)
    beta = np.array([math.cos(math.pi / 3), math.sin(math.pi / 3)])
    new = population_update_2d(m, g, beta)
    assert angle(new, m.beta_star) < math.pi / 3
    mc = population_update_mc(m, g, beta, 400_000, RngSeed(9))
    assert np.all(np.abs(new - mc.mean) < 4 * mc.stderr)


@pytest.mark.parametrize("name,d", [("laplace", 2), ("poly3", 3), ("logistic", 3)])
def test_quadrature_agrees_with_monte_carlo(name, d):
    dens = family(name)
    bs = np.zeros(d)
    bs[:2] = (1.0, 0.3)
    beta = np.full(d, 0.4)
    m = MixtureModel(dens, bs, 1.2)
    quad = population_update_2d(m, dens, beta)
    mc = population_update_mc(m, dens, beta, 400_000, RngSeed(21, d))
    assert np.all(np.abs(quad - mc.mean) < 4 * mc.stderr)


def test_self_consistency_in_three_dimensions():
    dens = density("laplace")
    m = MixtureModel(dens, [0.6, -0.8, 0.5], 1.0)
    np.testing.assert_allclose(population_update_2d(m, dens, m.beta_star), m.beta_star, atol=1e-7)


def test_degenerate_basis_and_argument_checks():
    g = density("gaussian")
    with pytest.raises(LSEMError):
        population_update_2d(MixtureModel(g, [0.0, 0.0], 1.0), g, [0.0, 0.0])
    np.testing.assert_array_equal(population_update_2d(MixtureModel(g, [1.0, 0.0]), g, [0, 0]), 0.0)
    with pytest.raises(ValueError):
        population_update_2d(MixtureModel(g, [1.0]), g, [1.0])
    with pytest.raises(ValueError):
        population_update_mc(MixtureModel(g, [1.0]), g, [1.0], 100, RngSeed())


# --- finite samples -----------------------------------------------------------

def test_sample_update_elementary_cases():
    g = density("logistic")
    x = np.array([[0.3], [-1.2], [2.5]])
    sym = np.vstack([x, -x])
    assert sample_update(g, 1.0, [0.0], sym)[0] == 0.0
    single = sample_update(g, 1.0, [0.8], x[:1])[0]
    assert single == pytest.approx(0.3 * math.tanh(0.5 * f_gap(g, 0.8, 1.0, 0.3)), rel=1e-14)
    with pytest.raises(ValueError):
        sample_update(g, 1.0, [0.5], np.empty((0, 1)))
    with pytest.raises(ValueError):
        sample_update(g, 1.0, [0.5], x, data_kind="labels")


def test_component_and_mixture_data_estimate_the_same_update():
    g = density("laplace")
    m = MixtureModel(g, [1.0], 1.0)
    pop = population_update_1d(m, g, 0.6)
    mix = sample_mixture(m, 400_000, RngSeed(4))
    comp = mix.x * np.where(mix.z == 1, 1.0, -1.0)[:, None]
    a = sample_update(g, 1.0, [0.6], mix, "mixture")[0]
    b = sample_update(g, 1.0, [0.6], comp, "component")[0]
    se = 1.5 / math.sqrt(400_000)
    assert abs(a - pop) < 4 * se and abs(b - pop) < 4 * se
    # the summand is even in x, so flipping points does not change the estimate at all
    assert a == pytest.approx(b, abs=1e-12)


def test_finite_sample_coupling_quantile():
    g = density("gaussian")
    m = MixtureModel(g, [1.0], 1.0)
    pop = population_update_1d(m, g, 0.5)
    n, c_f = 10_000, 1.3725
    errs = [abs(sample_update(g, 1.0, [0.5], sample_mixture(m, n, RngSeed(8, k)))[0] - pop)
            for k in range(200)]
    assert np.quantile(errs, 0.95) < 6 * (1.0 + c_f) / math.sqrt(n)


# --- Q-function ------------------------------------------------------------------

def test_q_symmetry():
    dens = density("polynomial", 2.5)
    m = MixtureModel(dens, [1.0], 1.0)
    assert q_value(m, 0.7, 0.4) == pytest.approx(q_value(m, -0.7, -0.4), rel=1e-12)


def test_q_maximised_at_truth_for_gaussian():
    g = density("gaussian")
    m = MixtureModel(g, [1.0], 1.0)
    grid = np.linspace(0.5, 1.5, 21)
    values = [q_value(m, b, 1.0) for b in grid]
    assert grid[int(np.argmax(values))] == pytest.approx(1.0)


def test_q_improvement_matches_difference_of_values():
    dens = density("polynomial", 1.0)
    m = MixtureModel(dens, [1.0], 1.0)
    new = population_update_1d(m, dens, 0.5)
    gain = q_improvement(m, 0.5, new)
    assert gain > 0
    assert gain == pytest.approx(q_value(m, new, 0.5) - q_value(m, 0.5, 0.5), abs=1e-9)


# --- iteration driver -----------------------------------------------------------

def test_gaussian_run_converges_quickly():
    g = density("gaussian")
    m = MixtureModel(g, [1.0], 1.0)
    trace = run_lsem(UpdateEngine("population_1d", m), [0.1], truth_for_diagnostics=m.beta_star)
    assert trace.converged and len(trace) - 1 <= 60
    assert abs(trace.final[0] - 1.0) < 1e-6
    assert len(trace.distances) == len(trace.angles) == len(trace)
    assert len(trace.per_step_kappa) == len(trace) - 1
    neg = run_lsem(UpdateEngine("population_1d", m), [-0.1], truth_for_diagnostics=m.beta_star)
    assert abs(neg.final[0] + 1.0) < 1e-6 and neg.distances[-1] < 1e-6


def test_two_dimensional_run_decreases_angle():
    dens = density("laplace")
    m = MixtureModel(dens, [1.0, 0.0], 1.0)
    start = [math.cos(math.radians(85)), math.sin(math.radians(85))]
    trace = run_lsem(UpdateEngine("population_2d", m), start, tol=1e-8, max_iter=300,
                     truth_for_diagnostics=m.beta_star)
    angles = np.array(trace.angles)
    moving = angles[angles > 1e-6]
    assert np.all(np.diff(moving) < 0)
    np.testing.assert_allclose(trace.final, m.beta_star, atol=1e-6)


def test_finite_sample_engine_is_reproducible():
    g = density("gaussian")
    m = MixtureModel(g, [1.0], 1.0)
    eng = UpdateEngine("finite_sample", m, n=1000, rng=RngSeed(2))
    a = run_lsem(eng, [0.2], max_iter=5).iterates
    b = run_lsem(eng, [0.2], max_iter=5).iterates
    np.testing.assert_array_equal(np.array(a), np.array(b))
    fixed = sample_mixture(m, 500, RngSeed(1))
    run_lsem(UpdateEngine("finite_sample", m, data=fixed), [0.2], max_iter=3)


def test_engine_validation_and_divergence():
    g = density("gaussian")
    with pytest.raises(ValueError):
        UpdateEngine("population_2d", MixtureModel(g, [1.0]))
    with pytest.raises(ValueError):
        UpdateEngine("monte_carlo", MixtureModel(g, [1.0]))
    with pytest.raises(ValueError):
        UpdateEngine("newton", MixtureModel(g, [1.0]))

    class Exploding(UpdateEngine):
        def step(self, beta, t=0):
            return np.array([np.inf])

    with pytest.raises(DivergenceError):
        run_lsem(Exploding("population_1d", MixtureModel(g, [1.0])), [0.5])
    with pytest.raises(ValueError):
        run_lsem(UpdateEngine("population_1d", MixtureModel(g, [1.0])), [np.nan])
