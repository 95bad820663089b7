import math

import numpy as np
import pytest

from multiscale_mle.dynamics import SimConfig, simulate_euler, solve_limiting_ode
from multiscale_mle.errors import ConfigError, FisherDegenerateError
from multiscale_mle.likelihood import (
    LikelihoodKind,
    bias_term_closed_form,
    bias_term_H,
    fisher_information,
    limiting_log_likelihood,
    limiting_profile,
    limiting_pseudo_likelihood,
    limiting_pseudo_profile,
    log_likelihood,
    normed_likelihood_ratio,
    pseudo_log_likelihood,
    write_profile_csv,
)
from multiscale_mle.model import ModelSpec, Path, ScaleParams, builtin_model
from multiscale_mle.torus import TorusGrid, homogenization_factor

THETAS = np.linspace(0.0, 4.0, 201)


def ou_energy(x0, theta0, T):
    return x0**2 * (1 - math.exp(-2 * theta0 * T)) / (2 * theta0)


@pytest.fixture(scope="module")
def langevin_path(langevin):
    scale = ScaleParams(0.1, 0.01, 1)
    return simulate_euler(langevin, scale, 1.0, SimConfig(1.0, 0.1, 1e-6, 17))


@pytest.fixture(scope="module")
def ou_path(ou):
    return simulate_euler(ou, ScaleParams(0.1, 1.0, 3), 1.0, SimConfig(1.0, 1.0, 1e-3, 5))


@pytest.fixture(scope="module")
def ou_ode(ou):
    return solve_limiting_ode(ou, ScaleParams(0.05, 1.0, 3), 1.0, 1.0, 1.0, 1e-3)


@pytest.fixture(scope="module")
def langevin_ode(langevin):
    return solve_limiting_ode(langevin, ScaleParams(0.1, 0.01, 1), 1.0, 1.0, 1.0, 1e-3)


def test_empty_drift_gives_zero(ou_path):
    spec = ModelSpec(
        lambda t, x, y: 0.0 * y,
        lambda t, x, y: 0.0 * y,
        lambda x, y: 1.0 + 0.0 * y,
        1.0,
        (0.0, 1.0),
    )
    assert log_likelihood(ou_path, spec, ScaleParams(0.1, 1.0, 3), 0.5).value == 0.0


def test_quadratic_extrapolation(ou, ou_path):
    scale = ScaleParams(0.1, 1.0, 3)
    z = [log_likelihood(ou_path, ou, scale, t).value for t in (0.0, 1.0, 2.0, 3.0)]
    extrapolated = z[0] - 3 * z[1] + 3 * z[2]
    assert z[3] == pytest.approx(extrapolated, abs=1e-10 * max(1.0, abs(z[3])))
    assert z[2] - 2 * z[1] + z[0] < 0


def test_matches_compensated_loop(langevin, langevin_path):
    scale = ScaleParams(0.1, 0.01, 1)
    theta = 1.3
    x = langevin_path.values
    step = langevin_path.step
    total, comp = 0.0, 0.0

    def kahan_add(v):
        nonlocal total, comp
        yv = v - comp
        t = total + yv
        comp = (t - total) - yv
        total = t

    for k in range(x.size - 1):
        y = x[k] / 0.01
        f = 10.0 * (math.sin(y) - math.cos(y)) - theta * x[k]
        kahan_add(f * (x[k + 1] - x[k]) - 0.5 * f * f * step)
    value = log_likelihood(langevin_path, langevin, scale, theta).value
    assert value == pytest.approx(total, rel=1e-9)


def test_pseudo_without_fast_drift_scales(ou, ou_path):
    scale = ScaleParams(0.1, 0.05, 2, gamma=2.0)
    z = log_likelihood(ou_path, ou, scale, 1.2).value
    p = pseudo_log_likelihood(ou_path, ou, scale, 1.2)
    assert p.kind is LikelihoodKind.PSEUDO
    assert p.value == pytest.approx((1 + 0.25) * z, rel=1e-12)


def test_pseudo_with_equal_scales(langevin, langevin_path):
    scale = ScaleParams(0.1, 0.1, 2, gamma=1.0)
    z = log_likelihood(langevin_path, langevin, scale, 0.7).value
    z0 = log_likelihood(langevin_path, langevin, scale, 0.7, include_fast=False).value
    assert pseudo_log_likelihood(langevin_path, langevin, scale, 0.7).value == pytest.approx(z + z0, rel=1e-12)


def test_pseudo_matches_expanded_langevin_form(langevin, langevin_path):
    eps, delta = 0.1, 0.01
    scale = ScaleParams(eps, delta, 1)
    r = delta / eps
    x = langevin_path.values[:-1]
    dx = np.diff(langevin_path.values)
    step = langevin_path.step
    dQ = -np.sin(x / delta) + np.cos(x / delta)  # Q'(y)
    sum_vdx = math.fsum(x * dx)
    sum_cross = step * math.fsum(dQ * x)
    sum_v2 = step * math.fsum(x * x)
    base = pseudo_log_likelihood(langevin_path, langevin, scale, 0.0).value
    for theta in (0.5, 1.0, 2.5):
        expanded = -(r * r + 1) * theta * sum_vdx - r * theta * sum_cross - 0.5 * (r * r + 1) * theta**2 * sum_v2
        got = pseudo_log_likelihood(langevin_path, langevin, scale, theta).value - base
        assert got == pytest.approx(expanded, rel=1e-9)


def test_domain_enforced(ou, ou_path):
    with pytest.raises(ConfigError):
        log_likelihood(ou_path, ou, ScaleParams(0.1, 1.0, 3), 5.0)


def test_limiting_ou_regime3_closed_form(ou, ou_ode):
    energy = ou_energy(1.0, 1.0, 1.0)
    for theta in (0.3, 1.0, 2.2):
        v = limiting_log_likelihood(ou_ode, ou, theta, 1.0, 3)
        assert v.kind is LikelihoodKind.LIMITING_REGIME3
        assert v.value == pytest.approx((theta - theta**2 / 2) * energy, rel=1e-9)


@pytest.mark.parametrize("regime,gamma", [(1, None), (2, 1.0), (3, None)])
def test_limiting_argmax_at_truth(ou, ou_ode, regime, gamma):
    values = [v.value for v in limiting_profile(ou_ode, ou, THETAS, 1.0, regime, gamma=gamma)]
    assert THETAS[int(np.argmax(values))] == pytest.approx(1.0)


def test_regime1_and_regime3_coincide(ou, ou_ode):
    a = limiting_profile(ou_ode, ou, [0.5, 1.5], 1.0, 1)
    b = limiting_profile(ou_ode, ou, [0.5, 1.5], 1.0, 3)
    assert [v.value for v in a] == pytest.approx([v.value for v in b], rel=1e-14)


def test_regime1_with_fast_drift_refused(langevin, langevin_ode):
    with pytest.raises(ConfigError, match="pseudo"):
        limiting_log_likelihood(langevin_ode, langevin, 1.0, 1.0, 1)


def test_bias_zero_without_fast_drift(ou, ou_ode):
    assert bias_term_H(ou_ode, ou, 1.3, 1.0) == 0.0


def test_bias_generic_matches_closed_form(langevin, langevin_ode):
    grid = TorusGrid(512, 2 * math.pi)
    K = homogenization_factor(langevin.potential, 0.5, grid)
    energy = (1 - math.exp(-2 * K)) / (2 * K)  # x_bar = exp(-K t)
    h = bias_term_H(langevin_ode, langevin, 1.0, 1.0, grid, cross_check_tol=None)
    closed = bias_term_closed_form(langevin_ode, langevin, 1.0, 1.0, grid)
    assert h == pytest.approx(closed, abs=1e-7)
    assert closed == pytest.approx((K - 1.0) * energy, rel=1e-10)
    assert h <= 0


def test_limiting_pseudo_reduces_without_fast_drift(ou, ou_ode):
    a = limiting_pseudo_likelihood(ou_ode, ou, 1.4, 1.0).value
    b = limiting_log_likelihood(ou_ode, ou, 1.4, 1.0, 1).value
    assert a == pytest.approx(b, rel=1e-14)


def test_limiting_pseudo_maximizer_is_biased(langevin):
    grid = TorusGrid(512, 2 * math.pi)
    K = homogenization_factor(langevin.potential, 0.5, grid)
    theta0 = 3.0
    ode = solve_limiting_ode(langevin, ScaleParams(0.1, 0.01, 1), theta0, 1.0, 1.0, 1e-2, grid)
    values = [v.value for v in limiting_pseudo_profile(ode, langevin, THETAS, theta0, grid)]
    best = THETAS[int(np.argmax(values))]
    assert abs(best - theta0 * K) <= 0.5 * (THETAS[1] - THETAS[0]) + 1e-12
    assert abs(best - theta0) > 1.0


def test_limiting_pseudo_differences_free_of_fast_block(langevin):
    ode = solve_limiting_ode(langevin, ScaleParams(0.1, 0.01, 1), 1.0, 1.0, 1.0, 5e-2)
    grid = TorusGrid(256, 2 * math.pi)
    j = [v.value for v in limiting_pseudo_profile(ode, langevin, [0.5, 1.5], 1.0, grid)]
    # Same difference from the c-block and H alone.
    energy_c = lambda t: limiting_log_likelihood(ode, builtin_model("pure-ou"), t, 1.0, 3).value  # noqa: E731
    h = lambda t: bias_term_H(ode, langevin, t, 1.0, grid, cross_check_tol=None)  # noqa: E731
    assert j[1] - j[0] == pytest.approx(energy_c(1.5) - energy_c(0.5) + h(1.5) - h(0.5), rel=1e-9)


def test_fisher_ou(ou, ou_ode):
    report = fisher_information(ou_ode, ou, 1.0, 3)
    assert report.info == pytest.approx(ou_energy(1.0, 1.0, 1.0), abs=1e-7)
    assert report.q_values.shape == ou_ode.values.shape


def test_fisher_sigma_scaling(ou_ode):
    small = builtin_model("pure-ou", {"D": 0.5})
    large = builtin_model("pure-ou", {"D": 2.0})  # sigma doubled
    ratio = fisher_information(ou_ode, small, 1.0, 3).info / fisher_information(ou_ode, large, 1.0, 3).info
    assert ratio == pytest.approx(4.0, rel=1e-9)


def test_fisher_degenerate(ou_ode):
    spec = ModelSpec(
        lambda t, x, y: 0.0 * y,
        lambda t, x, y: -x + 0.0 * y,
        lambda x, y: 1.0 + 0.0 * y,
        1.0,
        (0.0, 2.0),
    )
    with pytest.raises(FisherDegenerateError, match="degenerate"):
        fisher_information(ou_ode, spec, 1.0, 3)


def test_fisher_requires_zero_fast_drift(langevin, langevin_ode):
    with pytest.raises(ConfigError):
        fisher_information(langevin_ode, langevin, 1.0, 1)


def test_normed_ratio_identities(ou, ou_path):
    scale = ScaleParams(0.1, 1.0, 3)
    assert normed_likelihood_ratio(ou_path, ou, scale, 1.0, 0.0) == 0.0
    u = 0.7
    direct = (
        log_likelihood(ou_path, ou, scale, 1.0 + math.sqrt(0.1) * u).value - log_likelihood(ou_path, ou, scale, 1.0).value
    ) / 0.1
    assert normed_likelihood_ratio(ou_path, ou, scale, 1.0, u) == pytest.approx(direct, rel=1e-12, abs=1e-12)
    with pytest.raises(ConfigError):
        normed_likelihood_ratio(ou_path, ou, scale, 3.9, 1.0)


def test_normed_ratio_lan_centering(ou, ou_ode):
    eps, u = 0.01, 1.0
    scale = ScaleParams(eps, 1.0, 3)
    info = fisher_information(ou_ode, ou, 1.0, 3).info
    m = np.array(
        [
            normed_likelihood_ratio(simulate_euler(ou, scale, 1.0, SimConfig(1.0, 1.0, 1e-3, 8, stream=(r,))), ou, scale, 1.0, u)
            for r in range(200)
        ]
    )
    se = m.std(ddof=1) / math.sqrt(m.size)
    assert abs(m.mean() + u * u * info / 2) <= 3 * se


def test_profile_csv(tmp_path, ou, ou_ode):
    f = tmp_path / "profile.csv"
    write_profile_csv(f, limiting_profile(ou_ode, ou, [0.5, 1.0], 1.0, 3))
    lines = f.read_text().splitlines()
    assert lines[0] == "theta,value,kind"
    assert lines[1].endswith(",limiting-regime3")
