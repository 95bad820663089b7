"""Small-noise multiscale diffusion models.

The state equation is

    dX = [(eps/delta) b(theta, X, X/delta) + c(theta, X, X/delta)] dt
         + sqrt(eps) sigma(X, X/delta) dW

with coefficients periodic (period ``lambda``) in the fast variable ``y``.
Coefficient callables must accept numpy arrays and broadcast; built-ins are
also written so that numba can compile them for the Euler kernel.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError

DriftFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
SigmaFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
PotentialFn = Callable[[np.ndarray], np.ndarray]

PERIODICITY_TOL = 1e-12


class Regime(enum.IntEnum):
    """Limit of eps/delta: infinity, gamma in (0, inf), or zero."""

    REGIME1 = 1
    REGIME2 = 2
    REGIME3 = 3

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, Regime):
            return value
        if isinstance(value, str):
            key = value.strip().lower().replace("regime", "").replace("_", "")
            if key.isdigit():
                value = int(key)
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ConfigError(f"unknown regime {value!r}; expected 1, 2 or 3") from None


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficient triple of the multiscale SDE plus its parameter set.

    ``potential`` is the fast potential ``Q`` with ``b = -Q'`` when the fast
    drift is of gradient type; it enables the Gibbs / partition-function
    shortcuts.  ``sigma`` must be bounded away from zero.
    """

    drift_b: DriftFn
    drift_c: DriftFn
    sigma: SigmaFn
    period_lambda: float
    theta_domain: tuple[float, float]
    linear_in_theta: bool = False
    dimension: int = 1
    name: str = "custom"
    potential: PotentialFn | None = None
    options: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.theta_domain
        if not lo < hi:
            raise ConfigError(f"theta_domain must satisfy lo < hi, got {self.theta_domain}")
        if not self.period_lambda > 0:
            raise ConfigError("period_lambda must be positive")
        if self.dimension != 1:
            raise ConfigError("only dimension 1 is supported; compose separable models per coordinate")

    # Array-valued evaluation, always broadcast to the common shape.
    def b(self, theta: float, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.broadcast_to(np.asarray(self.drift_b(theta, x, y), float), x.shape)

    def c(self, theta: float, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.broadcast_to(np.asarray(self.drift_c(theta, x, y), float), x.shape)

    def sig(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.broadcast_to(np.asarray(self.sigma(x, y), float), x.shape)

    def contains(self, theta: float) -> bool:
        lo, hi = self.theta_domain
        return lo <= theta <= hi

    @property
    def theta_mid(self) -> float:
        return 0.5 * (self.theta_domain[0] + self.theta_domain[1])

    def probe_points(self, n: int = 64, seed: int = 0):
        """Deterministic random (theta, x, y) probes used by structural checks."""
        rng = np.random.default_rng(seed)
        lo, hi = self.theta_domain
        theta = rng.uniform(lo, hi, n)
        x = rng.uniform(-3.0, 3.0, n)
        y = rng.uniform(0.0, self.period_lambda, n)
        return theta, x, y

    @functools.cached_property
    def fast_drift_vanishes(self) -> bool:
        """True when b is identically zero on the probe set."""
        tol = 1e-14
        theta, x, y = self.probe_points()
        vals = np.array([self.b(t, xi, yi) for t, xi, yi in zip(theta, x, y)])
        return bool(np.all(np.abs(vals) <= tol))

    @functools.cached_property
    def sigma_is_constant(self) -> bool:
        tol = 1e-14
        _, x, y = self.probe_points()
        s = self.sig(x, y)
        return bool(np.ptp(s) <= tol * max(1.0, abs(float(s[0]))))

    @functools.cached_property
    def slow_drift_is_fast_free(self) -> bool:
        """True when c does not depend on the fast variable y."""
        tol = 1e-13
        theta, x, y = self.probe_points()
        shift = np.linspace(0.0, self.period_lambda, 7, endpoint=False)
        for t, xi, yi in zip(theta[:16], x[:16], y[:16]):
            v = self.c(t, xi, yi + shift)
            if np.ptp(v) > tol * max(1.0, float(np.max(np.abs(v)))):
                return False
        return True

    def diffusion_constant(self) -> float:
        """D with sigma = sqrt(2 D); requires a constant sigma."""
        if not self.sigma_is_constant:
            raise ValueError("diffusion constant D is only defined for constant sigma")
        s = float(self.sig(0.0, 0.0))
        return 0.5 * s * s


@dataclass(frozen=True)
class ScaleParams:
    """Noise intensity, oscillation scale and declared regime."""

    epsilon: float
    delta: float
    regime: Regime
    gamma: float | None = None

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta > 0):
            raise ConfigError("epsilon and delta must be positive")
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        if self.regime is Regime.REGIME2:
            if self.gamma is None or not self.gamma > 0:
                raise ConfigError("Regime 2 requires a positive gamma")

    @property
    def ratio(self) -> float:
        """eps / delta."""
        return self.epsilon / self.delta

    @property
    def gamma_gap(self) -> float | None:
        """|eps/delta - gamma| for Regime 2, a diagnostic only."""
        if self.regime is not Regime.REGIME2:
            return None
        return abs(self.ratio - self.gamma)


@dataclass(frozen=True, eq=False)
class Path:
    """Uniformly sampled trajectory x_0..x_n with spacing ``step``."""

    step: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("a path needs at least two samples")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path contains non-finite values")
        if not self.step > 0:
            raise ValueError("path step must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        """Number of increments."""
        return self.values.size - 1

    @property
    def horizon(self) -> float:
        return self.step * (self.values.size - 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.step


def classify_regime(epsilon: float, delta: float, tolerance_band: float = 0.1) -> Regime:
    """Advisory regime from the ratio eps/delta; band edges map to Regime 2."""
    if not (epsilon > 0 and delta > 0):
        raise ValueError("epsilon and delta must be positive")
    ratio = epsilon / delta
    if ratio > 1.0 / tolerance_band:
        return Regime.REGIME1
    if ratio < tolerance_band:
        return Regime.REGIME3
    return Regime.REGIME2


def check_model(model: ModelSpec, sigma_min: float = 1e-8, n_probe: int = 64) -> None:
    """Validate sampled periodicity in y and nondegeneracy of sigma."""
    lam = model.period_lambda
    theta, x, y = model.probe_points(n_probe)
    for label, f in (
        ("b", lambda t, xx, yy: model.b(t, xx, yy)),
        ("c", lambda t, xx, yy: model.c(t, xx, yy)),
        ("sigma", lambda t, xx, yy: model.sig(xx, yy)),
    ):
        base = np.array([f(t, xi, yi) for t, xi, yi in zip(theta, x, y)])
        shifted = np.array([f(t, xi, yi + lam) for t, xi, yi in zip(theta, x, y)])
        gap = np.abs(shifted - base)
        if np.any(gap > PERIODICITY_TOL * np.maximum(1.0, np.abs(base))):
            raise ConfigError(f"coefficient {label} is not {lam}-periodic in y")
    s = model.sig(x, y)
    if not np.all(np.isfinite(s)) or float(np.min(s * s)) < sigma_min**2:
        raise ConfigError("sigma must be bounded away from zero")


# ---------------------------------------------------------------------------
# Built-in catalog

_REGISTRY: dict[str, Callable[..., ModelSpec]] = {}


def register_model(name: str):
    """Decorator adding a factory ``f(**options) -> ModelSpec`` to the catalog."""

    def deco(factory):
        _REGISTRY[name] = factory
        return factory

    return deco


def available_models() -> list[str]:
    return sorted(_REGISTRY)


def builtin_model(name: str, options: Mapping[str, float] | None = None) -> ModelSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: {', '.join(available_models())}") from None
    opts = dict(options or {})
    try:
        model = factory(**opts)
    except TypeError as exc:
        raise ConfigError(f"bad options for model {name!r}: {exc}") from None
    check_model(model)
    return model


def _sigma_from_D(D: float) -> float:
    if not (D > 0 and math.isfinite(D)):
        raise ConfigError(f"diffusion constant D must be positive, got {D}")
    return math.sqrt(2.0 * D)


def _domain(theta_lo: float, theta_hi: float) -> tuple[float, float]:
    return (float(theta_lo), float(theta_hi))


@register_model("langevin-cos-sin")
def _langevin_cos_sin(D: float = 0.5, theta_lo: float = 0.0, theta_hi: float = 4.0) -> ModelSpec:
    s = _sigma_from_D(D)

    def fast_potential(y):
        return np.cos(y) + np.sin(y)

    def b(theta, x, y):
        return np.sin(y) - np.cos(y)

    def c(theta, x, y):
        return -theta * x + 0.0 * y

    def sigma(x, y):
        return s + 0.0 * x + 0.0 * y

    return ModelSpec(
        drift_b=b,
        drift_c=c,
        sigma=sigma,
        period_lambda=2.0 * math.pi,
        theta_domain=_domain(theta_lo, theta_hi),
        linear_in_theta=True,
        name="langevin-cos-sin",
        potential=fast_potential,
        options={"D": D},
    )


@register_model("pure-ou")
def _pure_ou(D: float = 0.5, theta_lo: float = 0.0, theta_hi: float = 4.0) -> ModelSpec:
    s = _sigma_from_D(D)

    def b(theta, x, y):
        return 0.0 * x + 0.0 * y

    def c(theta, x, y):
        return -theta * x + 0.0 * y

    def sigma(x, y):
        return s + 0.0 * x + 0.0 * y

    def flat(y):
        return 0.0 * y

    return ModelSpec(
        drift_b=b,
        drift_c=c,
        sigma=sigma,
        period_lambda=2.0 * math.pi,
        theta_domain=_domain(theta_lo, theta_hi),
        linear_in_theta=True,
        name="pure-ou",
        potential=flat,
        options={"D": D},
    )


@register_model("regime3-positive-speed")
def _regime3_positive_speed(
    D: float = 0.5, period: float = 1.0, theta_lo: float = 0.1, theta_hi: float = 4.0
) -> ModelSpec:
    s = _sigma_from_D(D)
    k = 2.0 * math.pi / period

    def b(theta, x, y):
        return 0.0 * x + 0.0 * y

    def c(theta, x, y):
        return theta * (2.0 + np.sin(k * y)) + 0.0 * x

    def sigma(x, y):
        return s + 0.0 * x + 0.0 * y

    def flat(y):
        return 0.0 * y

    return ModelSpec(
        drift_b=b,
        drift_c=c,
        sigma=sigma,
        period_lambda=float(period),
        theta_domain=_domain(theta_lo, theta_hi),
        linear_in_theta=True,
        name="regime3-positive-speed",
        potential=flat,
        options={"D": D, "period": period},
    )
