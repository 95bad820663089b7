import math

import numpy as np
import pytest
from scipy.special import i0

from multiscale_mle.model import ScaleParams, builtin_model
from multiscale_mle.torus import TorusGrid


@pytest.fixture(scope="session")
def langevin():
    return builtin_model("langevin-cos-sin", {"D": 0.5})


@pytest.fixture(scope="session")
def ou():
    return builtin_model("pure-ou", {"D": 0.5})


@pytest.fixture(scope="session")
def speed():
    return builtin_model("regime3-positive-speed", {"D": 0.5})


@pytest.fixture(scope="session")
def grid():
    return TorusGrid(512, 2.0 * math.pi)


@pytest.fixture(scope="session")
def regime1_scale():
    return ScaleParams(0.1, 0.01, 1)


# exp(-2(cos y + sin y)) = exp(-2 sqrt(2) cos(y - pi/4)): Z = Zhat = 2 pi I0(2 sqrt 2).
BESSEL_Z = 2.0 * math.pi * float(i0(2.0 * math.sqrt(2.0)))


def fine_quadrature(f, period=2.0 * math.pi, n=100_000):
    y = np.arange(n) * period / n
    return float(np.sum(f(y)) * period / n)


def trig_langevin(coeffs, D, theta_domain=(0.0, 4.0)):
    """Separable Langevin model with Q(y) = sum_k a_k cos(k y) + b_k sin(k y), c = -theta x."""
    from multiscale_mle.model import ModelSpec

    coeffs = [(float(a), float(b)) for a, b in coeffs]
    s = math.sqrt(2.0 * D)

    def Q(y):
        return sum(a * np.cos(k * y) + b * np.sin(k * y) for k, (a, b) in enumerate(coeffs, 1))

    def b_fn(theta, x, y):
        return sum(a * k * np.sin(k * y) - b * k * np.cos(k * y) for k, (a, b) in enumerate(coeffs, 1)) + 0.0 * x

    return ModelSpec(
        drift_b=b_fn,
        drift_c=lambda theta, x, y: -theta * x + 0.0 * y,
        sigma=lambda x, y: s + 0.0 * x + 0.0 * y,
        period_lambda=2.0 * math.pi,
        theta_domain=theta_domain,
        linear_in_theta=True,
        name="trig-langevin",
        potential=Q,
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
