import dataclasses
import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from multiscale_mle.dynamics import solve_limiting_ode
from multiscale_mle.estimate import maximize_bounded
from multiscale_mle.likelihood import bias_term_H, limiting_profile
from multiscale_mle.mc import summarize
from multiscale_mle.model import Regime, ScaleParams, builtin_model
from multiscale_mle.torus import TorusGrid, gibbs_density, homogenization_factor, invariant_density

from .conftest import trig_langevin

GRID = TorusGrid(512, 2.0 * math.pi)
coef = st.floats(-1.0, 1.0, allow_nan=False)
coeff_lists = st.lists(st.tuples(coef, coef), min_size=1, max_size=3)
diffusion = st.floats(0.3, 2.0)
theta = st.floats(0.05, 3.95)
quick = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@quick
@given(coeff_lists, diffusion)
def test_correction_factor_at_most_one(coeffs, D):
    model = trig_langevin(coeffs, D)
    k = homogenization_factor(model.potential, D, GRID)
    assert 0.0 < k <= 1.0 + 1e-12


@quick
@given(coeff_lists, diffusion)
def test_gibbs_density_normalized_and_matches_fd(coeffs, D):
    model = trig_langevin(coeffs, D)
    g = gibbs_density(model.potential, D, GRID)
    assert abs(GRID.integrate(g.values) - 1.0) < 1e-12
    # without the potential the FD stationary solver is used instead
    fd = invariant_density(dataclasses.replace(model, potential=None), Regime.REGIME1, 1.0, 0.5, GRID)
    assert abs(GRID.integrate(fd.values) - 1.0) < 1e-12
    assert np.all(fd.values > 0)
    # truncation error grows with the frequency content of Q and with 1/D
    assert np.max(np.abs(fd.values - g.values)) < 1e-4 * np.max(g.values)


@settings(max_examples=15, deadline=None)
@given(coeff_lists, diffusion, theta, theta)
def test_bias_nonpositive(coeffs, D, th, th0):
    model = trig_langevin(coeffs, D)
    ode = solve_limiting_ode(model, ScaleParams(0.1, 0.01, Regime.REGIME1), th0, 1.0, 1.0, 0.05, GRID)
    assert bias_term_H(ode, model, th, th0, GRID) <= 0.0


@quick
@given(st.floats(-3, 3), st.floats(0.1, 10.0), st.floats(-100, 100))
def test_argmax_invariant_under_affine_rescaling(center, a, shift):
    f = lambda t: -((t - center) ** 2) + 0.3 * t  # noqa: E731
    g = lambda t: a * f(t) + shift  # noqa: E731
    grid = np.linspace(-5.0, 5.0, 201)
    assert np.argmax([f(t) for t in grid]) == np.argmax([g(t) for t in grid])
    # near a quadratic maximum, values resolve the location only to ~sqrt(eps * |g|)
    resolution = math.sqrt(np.finfo(float).eps * (abs(shift) + a * 40.0) / a)
    assert abs(maximize_bounded(f, -5.0, 5.0) - maximize_bounded(g, -5.0, 5.0)) < 1e-8 + 4 * resolution


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 3.8), st.floats(-5.0, 5.0))
def test_limiting_argmax_ignores_theta_free_constants(theta0, const):
    ou = builtin_model("pure-ou")
    ode = solve_limiting_ode(ou, ScaleParams(0.05, 1.0, Regime.REGIME3), theta0, 1.0, 1.0, 0.01)
    thetas = np.linspace(0.0, 4.0, 201)
    vals = np.array([v.value for v in limiting_profile(ode, ou, thetas, theta0, Regime.REGIME3)])
    k = int(np.argmax(vals))
    assert k == int(np.argmax(vals + const))
    assert k == int(np.argmin(np.abs(thetas - theta0)))


@quick
@given(st.lists(st.floats(-10, 10), min_size=20, max_size=60))
def test_interval_nesting(values):
    s = summarize(1.0, ScaleParams(0.1, 1.0, Regime.REGIME3), values, values, values, 0, len(values), None, 20)
    assert s.ci95[0] <= s.ci68[0] <= s.mean <= s.ci68[1] <= s.ci95[1]
    assert s.sd >= 0.0
