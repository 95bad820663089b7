import math

import numpy as np
import pytest

from multiscale_mle.errors import ConfigError
from multiscale_mle.model import (
    ModelSpec,
    Path,
    Regime,
    ScaleParams,
    available_models,
    builtin_model,
    check_model,
    classify_regime,
    register_model,
)

from .conftest import fine_quadrature


def test_langevin_coefficients(langevin):
    y = np.linspace(0, 7, 50)
    assert np.allclose(langevin.b(1.0, 0.3, y), np.sin(y) - np.cos(y), atol=0, rtol=0)
    assert langevin.period_lambda == 2 * math.pi
    assert float(langevin.sig(0.0, 0.0)) == pytest.approx(1.0, abs=1e-15)
    assert langevin.c(2.0, 1.5, 0.0) == -3.0


def test_pure_ou_has_no_fast_drift(ou):
    assert ou.fast_drift_vanishes
    check_model(ou)


def test_positive_speed_minimum(speed):
    y = np.linspace(0, speed.period_lambda, 1001)
    assert np.min(speed.c(1.0, 0.0, y)) == pytest.approx(1.0, abs=1e-6)
    assert np.all(speed.c(1.0, 0.0, y) >= 1.0 - 1e-12)


def test_langevin_centering_against_gibbs(langevin):
    D = 0.5
    val = fine_quadrature(lambda y: (np.sin(y) - np.cos(y)) * np.exp(-(np.cos(y) + np.sin(y)) / D))
    assert abs(val) < 1e-10


@pytest.mark.parametrize(
    "eps,delta,band,expected",
    [
        (0.1, 0.005, 0.1, Regime.REGIME1),
        # eps/delta = 10 sits exactly on the upper edge 1/band, which maps to Regime 2.
        (0.1, 0.01, 0.1, Regime.REGIME2),
        (0.1, 0.01, 0.05, Regime.REGIME2),
        (0.1, 0.1, 0.1, Regime.REGIME2),
        (0.01, 0.1, 0.05, Regime.REGIME2),
        (0.001, 0.1, 0.05, Regime.REGIME3),
        (0.1, 1.0, 0.1, Regime.REGIME2),  # lower band edge
    ],
)
def test_classify_regime(eps, delta, band, expected):
    assert classify_regime(eps, delta, band) is expected


def test_classify_rejects_nonpositive():
    with pytest.raises(ValueError):
        classify_regime(0.0, 1.0)


def test_unknown_model_and_bad_options():
    with pytest.raises(ConfigError, match="unknown model"):
        builtin_model("nope")
    with pytest.raises(ConfigError):
        builtin_model("pure-ou", {"D": 0.0})
    with pytest.raises(ConfigError, match="bad options"):
        builtin_model("pure-ou", {"colour": 1.0})


def test_scale_params_validation():
    with pytest.raises(ConfigError):
        ScaleParams(0.0, 1.0, 1)
    with pytest.raises(ConfigError):
        ScaleParams(0.1, 0.1, 2)
    s = ScaleParams(0.1, 0.05, "regime2", gamma=1.5)
    assert s.regime is Regime.REGIME2
    assert s.gamma_gap == pytest.approx(0.5)
    assert ScaleParams(0.1, 0.01, 1).gamma_gap is None


def test_path_invariants():
    p = Path(0.25, [0.0, 1.0, 2.0, 3.0, 4.0])
    assert p.n == 4 and p.horizon == 1.0
    assert np.array_equal(p.times, [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        Path(0.1, [1.0])
    with pytest.raises(ValueError):
        Path(0.1, [1.0, math.nan])
    with pytest.raises(ValueError):
        p.values[0] = 3.0


def test_periodicity_check_rejects_aperiodic():
    spec = ModelSpec(
        drift_b=lambda t, x, y: 0.0 * y + 0.1 * y,
        drift_c=lambda t, x, y: -t * x + 0.0 * y,
        sigma=lambda x, y: 1.0 + 0.0 * y,
        period_lambda=1.0,
        theta_domain=(0.0, 1.0),
    )
    with pytest.raises(ConfigError, match="periodic"):
        check_model(spec)


def test_nondegenerate_sigma_check():
    spec = ModelSpec(
        drift_b=lambda t, x, y: 0.0 * y,
        drift_c=lambda t, x, y: 0.0 * y,
        sigma=lambda x, y: np.sin(2 * np.pi * y),
        period_lambda=1.0,
        theta_domain=(0.0, 1.0),
    )
    with pytest.raises(ConfigError, match="bounded away"):
        check_model(spec, sigma_min=0.5)


def test_theta_domain_order():
    with pytest.raises(ConfigError):
        ModelSpec(lambda t, x, y: 0 * y, lambda t, x, y: 0 * y, lambda x, y: 1 + 0 * y, 1.0, (1.0, 1.0))


def test_registry_accepts_custom_model():
    @register_model("test-constant-drift")
    def _factory(D=0.5):
        s = math.sqrt(2 * D)
        return ModelSpec(
            lambda t, x, y: 0.0 * y,
            lambda t, x, y: t + 0.0 * y,
            lambda x, y: s + 0.0 * y,
            1.0,
            (0.0, 2.0),
            linear_in_theta=True,
            name="test-constant-drift",
        )

    assert "test-constant-drift" in available_models()
    assert builtin_model("test-constant-drift").c(1.5, 0.0, 0.3) == 1.5
