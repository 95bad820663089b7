"""Path functionals: exact, pseudo and limiting log-likelihoods, the bias
term of the pseudo-likelihood, Fisher information and the normed
likelihood ratio.

Stochastic integrals use the left-point rule on the observed increments.
Long path sums are accumulated with ``math.fsum`` (exactly rounded), which
is at least as accurate as compensated summation.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigError, FisherDegenerateError, NumericalError
from .model import ModelSpec, Path, Regime, ScaleParams
from .torus import (
    TorusGrid,
    has_gibbs_form,
    homogenization_factor,
    invariant_density,
    solve_poisson_phi,
)


class LikelihoodKind(enum.Enum):
    EXACT = "exact"
    PSEUDO = "pseudo"
    LIMITING_REGIME1 = "limiting-regime1"
    LIMITING_REGIME2 = "limiting-regime2"
    LIMITING_REGIME3 = "limiting-regime3"
    LIMITING_PSEUDO = "limiting-pseudo"

    @classmethod
    def parse(cls, value) -> "LikelihoodKind":
        if isinstance(value, LikelihoodKind):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown likelihood kind {value!r}; expected one of {names}") from None

    @classmethod
    def limiting(cls, regime) -> "LikelihoodKind":
        return {
            Regime.REGIME1: cls.LIMITING_REGIME1,
            Regime.REGIME2: cls.LIMITING_REGIME2,
            Regime.REGIME3: cls.LIMITING_REGIME3,
        }[Regime.parse(regime)]


@dataclass(frozen=True)
class LikelihoodValue:
    value: float
    kind: LikelihoodKind
    theta: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise NumericalError(f"non-finite {self.kind.value} likelihood at theta={self.theta!r}")


@dataclass(frozen=True, eq=False)
class FisherReport:
    info: float
    q_values: np.ndarray
    theta: float
    regime: Regime


def _time_integral(values, times) -> float:
    """Composite Simpson rule on the stored nodes of an averaged path."""
    return float(simpson(values, x=times))


def _require_domain(model: ModelSpec, *thetas: float) -> None:
    for t in thetas:
        if not model.contains(t):
            raise ConfigError(f"theta={t!r} lies outside the parameter domain {model.theta_domain}")


# ---------------------------------------------------------------------------
# Path likelihoods


@dataclass(frozen=True, eq=False)
class _PathTerms:
    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    inv_var: np.ndarray


def _path_terms(path: Path, scale: ScaleParams, model: ModelSpec) -> _PathTerms:
    x = path.values[:-1]
    y = x / scale.delta
    s = model.sig(x, y)
    return _PathTerms(x, y, np.diff(path.values), 1.0 / (s * s))


def _z_value(terms: _PathTerms, model: ModelSpec, scale: ScaleParams, step: float, theta: float, include_fast: bool) -> float:
    f = np.array(model.c(theta, terms.x, terms.y), dtype=float)
    if include_fast:
        f += scale.ratio * model.b(theta, terms.x, terms.y)
    wf = terms.inv_var * f
    value = math.fsum(wf * terms.dx) - 0.5 * step * math.fsum(wf * f)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite likelihood accumulation at theta={theta!r}")
    return value


def log_likelihood(
    path: Path,
    model: ModelSpec,
    scale: ScaleParams,
    theta: float,
    include_fast: bool = True,
) -> LikelihoodValue:
    """Discretized log-likelihood of the drift parameter.

    ``sum w f(x_k) (x_{k+1} - x_k) - 1/2 sum w f(x_k)^2 step`` with
    ``f = (eps/delta) b + c`` and ``w = 1/sigma^2``; ``include_fast=False``
    drops b.
    """
    _require_domain(model, theta)
    terms = _path_terms(path, scale, model)
    value = _z_value(terms, model, scale, path.step, theta, include_fast)
    return LikelihoodValue(value, LikelihoodKind.EXACT, theta)


def pseudo_log_likelihood(path: Path, model: ModelSpec, scale: ScaleParams, theta: float) -> LikelihoodValue:
    """(delta/eps)^2 * Z(theta) + Z(theta; b = 0)."""
    _require_domain(model, theta)
    terms = _path_terms(path, scale, model)
    r = scale.delta / scale.epsilon
    full = _z_value(terms, model, scale, path.step, theta, True)
    slow = _z_value(terms, model, scale, path.step, theta, False)
    return LikelihoodValue(r * r * full + slow, LikelihoodKind.PSEUDO, theta)


def path_likelihood(path, model, scale, theta, kind) -> LikelihoodValue:
    kind = LikelihoodKind.parse(kind)
    if kind is LikelihoodKind.EXACT:
        return log_likelihood(path, model, scale, theta)
    if kind is LikelihoodKind.PSEUDO:
        return pseudo_log_likelihood(path, model, scale, theta)
    raise ConfigError(f"{kind.value} is not a path likelihood; use exact or pseudo")


def path_likelihood_function(path: Path, model: ModelSpec, scale: ScaleParams, kind):
    """theta -> likelihood value with the path-only work done once."""
    kind = LikelihoodKind.parse(kind)
    if kind not in (LikelihoodKind.EXACT, LikelihoodKind.PSEUDO):
        raise ConfigError(f"{kind.value} is not a path likelihood; use exact or pseudo")
    terms = _path_terms(path, scale, model)
    r2 = (scale.delta / scale.epsilon) ** 2

    def evaluate(theta: float) -> float:
        full = _z_value(terms, model, scale, path.step, theta, True)
        if kind is LikelihoodKind.EXACT:
            return full
        return r2 * full + _z_value(terms, model, scale, path.step, theta, False)

    return evaluate


def normed_likelihood_ratio(path: Path, model: ModelSpec, scale: ScaleParams, theta: float, u: float) -> float:
    """(1/eps) [Z(theta + sqrt(eps) u) - Z(theta)] with the fast drift dropped."""
    shifted = theta + math.sqrt(scale.epsilon) * u
    _require_domain(model, theta, shifted)
    terms = _path_terms(path, scale, model)
    z1 = _z_value(terms, model, scale, path.step, shifted, False)
    z0 = _z_value(terms, model, scale, path.step, theta, False)
    return (z1 - z0) / scale.epsilon


# ---------------------------------------------------------------------------
# Limiting functionals along an averaged path


class _LimitingFrame:
    """Densities of the fast variable at every node of an averaged path.

    Built once per (path, theta0, regime) and reused across a theta grid.
    """

    def __init__(self, ode_path: Path, model: ModelSpec, theta0: float, regime, grid: TorusGrid, gamma=None):
        self.model = model
        self.grid = grid
        self.theta0 = theta0
        self.regime = Regime.parse(regime)
        self.gamma = gamma
        self.times = ode_path.times
        self.x = ode_path.values[:, None]
        self.y = grid.nodes[None, :]
        s = model.sig(self.x, self.y)
        self.inv_var = 1.0 / (s * s)
        self.density = self._densities(ode_path.values, theta0)

    def _densities(self, xs, theta) -> np.ndarray:
        cache: dict[float, np.ndarray] = {}
        rows = []
        for x in xs:
            key = float(x)
            if key not in cache:
                cache[key] = invariant_density(self.model, self.regime, theta, key, self.grid, self.gamma).values
            rows.append(cache[key])
        return np.array(rows)

    def average(self, values) -> np.ndarray:
        """Fast-variable integral at each node."""
        return np.sum(values * self.density, axis=1) * self.grid.spacing

    def integrate(self, values) -> float:
        """Time integral of the node-wise fast average."""
        return float(_time_integral(self.average(values), self.times))

    def drift(self, theta) -> np.ndarray:
        c = self.model.c(theta, self.x, self.y)
        if self.regime is Regime.REGIME2:
            return self.gamma * self.model.b(theta, self.x, self.y) + c
        return c

    def quadratic(self, f_theta, f_theta0) -> float:
        """int <f, f0>_alpha - 1/2 |f|^2_alpha over the frame."""
        w = self.inv_var
        return self.integrate(w * f_theta * f_theta0 - 0.5 * w * f_theta * f_theta)


def limiting_log_likelihood(
    ode_path: Path,
    model: ModelSpec,
    theta: float,
    theta0: float,
    regime,
    grid: TorusGrid | None = None,
    gamma: float | None = None,
) -> LikelihoodValue:
    """Limit of the log-likelihood along the averaged path for the given regime."""
    return limiting_profile(ode_path, model, [theta], theta0, regime, grid, gamma)[0]


def limiting_profile(
    ode_path: Path,
    model: ModelSpec,
    thetas,
    theta0: float,
    regime,
    grid: TorusGrid | None = None,
    gamma: float | None = None,
) -> list[LikelihoodValue]:
    regime = Regime.parse(regime)
    if regime is Regime.REGIME1 and not model.fast_drift_vanishes:
        raise ConfigError("limiting Regime 1 likelihood requires b = 0; use the pseudo-likelihood path instead")
    if regime is Regime.REGIME2 and not (gamma is not None and gamma > 0):
        raise ConfigError("Regime 2 limiting likelihood requires a positive gamma")
    _require_domain(model, theta0, *thetas)
    grid = grid or TorusGrid.for_model(model)
    frame = _LimitingFrame(ode_path, model, theta0, regime, grid, gamma)
    f0 = frame.drift(theta0)
    kind = LikelihoodKind.limiting(regime)
    return [LikelihoodValue(frame.quadratic(frame.drift(t), f0), kind, float(t)) for t in thetas]


def _regime1_frame(ode_path, model, theta0, grid) -> _LimitingFrame:
    return _LimitingFrame(ode_path, model, theta0, Regime.REGIME1, grid)


def _bias_generic(frame: _LimitingFrame, theta: float) -> float:
    """int int c_theta0 dPhi/dy dmu ds, one Poisson solve per distinct node."""
    model, grid = frame.model, frame.grid
    cache: dict[float, float] = {}
    inner = np.empty(frame.x.shape[0])
    for k, x in enumerate(frame.x[:, 0]):
        key = float(x)
        if key not in cache:
            sol = solve_poisson_phi(model, theta, frame.theta0, key, grid)
            c0 = model.c(frame.theta0, key, grid.nodes)
            cache[key] = sol.density.expect(c0 * sol.dphi_dy)
        inner[k] = cache[key]
    return float(_time_integral(inner, frame.times))


def _closed_form_applies(model: ModelSpec) -> bool:
    return has_gibbs_form(model) and model.linear_in_theta and model.slow_drift_is_fast_free


def bias_term_closed_form(ode_path: Path, model: ModelSpec, theta: float, theta0: float, grid: TorusGrid | None = None) -> float:
    """theta theta0 (K - 1) int c1(x_s)^2 / sigma^2 ds with K = lambda^2 / (Z Zhat).

    Valid for a gradient fast drift, constant sigma and slow drift theta * c1(x).
    For c1 = -V' and sigma^2 = 2D this is (theta theta0 / 2D)(K - 1) int V'^2 ds.
    """
    if not _closed_form_applies(model):
        raise ConfigError("closed-form bias needs a gradient fast drift, constant sigma and slow drift theta*c1(x)")
    grid = grid or TorusGrid.for_model(model)
    D = model.diffusion_constant()
    K = homogenization_factor(model.potential, D, grid)
    xs = ode_path.values
    c1 = model.c(1.0, xs, np.zeros_like(xs))
    return theta * theta0 * (K - 1.0) * float(_time_integral(c1 * c1, ode_path.times)) / (2.0 * D)


def bias_term_H(
    ode_path: Path,
    model: ModelSpec,
    theta: float,
    theta0: float,
    grid: TorusGrid | None = None,
    cross_check_tol: float | None = 1e-7,
) -> float:
    """Bias of the limiting pseudo-likelihood through the Poisson solution.

    When the closed form applies and ``cross_check_tol`` is set, the generic
    value is compared with it and a NumericalError raised on disagreement.
    """
    _require_domain(model, theta, theta0)
    if model.fast_drift_vanishes:
        return 0.0
    grid = grid or TorusGrid.for_model(model)
    frame = _regime1_frame(ode_path, model, theta0, grid)
    h = _bias_generic(frame, theta)
    if cross_check_tol is not None and _closed_form_applies(model):
        ref = bias_term_closed_form(ode_path, model, theta, theta0, grid)
        if abs(h - ref) > cross_check_tol * max(1.0, abs(ref)):
            raise NumericalError(f"bias quadrature {h!r} disagrees with closed form {ref!r}")
    return h


def limiting_pseudo_profile(
    ode_path: Path,
    model: ModelSpec,
    thetas,
    theta0: float,
    grid: TorusGrid | None = None,
) -> list[LikelihoodValue]:
    """J(theta) + H(theta) on a grid of theta values (Regime 1)."""
    _require_domain(model, theta0, *thetas)
    grid = grid or TorusGrid.for_model(model)
    frame = _regime1_frame(ode_path, model, theta0, grid)
    x, y = frame.x, frame.y
    c0 = model.c(theta0, x, y)
    b0 = model.b(theta0, x, y)
    fast_free = model.fast_drift_vanishes
    # With c linear in theta the Poisson source, hence H, is linear in theta.
    # b is theta-free for such models, so its block is computed once.
    h_unit = b_block = None
    if model.linear_in_theta and not fast_free:
        h_unit = _bias_generic(frame, 1.0)
        b_block = frame.quadratic(b0, b0)
    out = []
    for t in thetas:
        value = frame.quadratic(model.c(t, x, y), c0)
        if not fast_free:
            value += b_block if b_block is not None else frame.quadratic(model.b(t, x, y), b0)
            value += t * h_unit if h_unit is not None else _bias_generic(frame, t)
        out.append(LikelihoodValue(value, LikelihoodKind.LIMITING_PSEUDO, float(t)))
    return out


def limiting_pseudo_likelihood(ode_path, model, theta, theta0, grid=None) -> LikelihoodValue:
    return limiting_pseudo_profile(ode_path, model, [theta], theta0, grid)[0]


# ---------------------------------------------------------------------------
# Fisher information


def theta_derivative_step(theta: float) -> float:
    return 1e-6 * max(1.0, abs(theta))


def fisher_information(
    ode_path: Path,
    model: ModelSpec,
    theta: float,
    regime,
    grid: TorusGrid | None = None,
    gamma: float | None = None,
    c0: float = 1e-12,
) -> FisherReport:
    """Time integral of q(x, theta) = int (dc/dtheta / sigma)^2 dmu along the averaged path."""
    if not model.fast_drift_vanishes:
        raise ConfigError("Fisher information is defined here for models with b = 0")
    regime = Regime.parse(regime)
    grid = grid or TorusGrid.for_model(model)
    frame = _LimitingFrame(ode_path, model, theta, regime, grid, gamma)
    h = theta_derivative_step(theta)
    dc = (model.c(theta + h, frame.x, frame.y) - model.c(theta - h, frame.x, frame.y)) / (2.0 * h)
    q = frame.average(dc * dc * frame.inv_var)
    info = float(_time_integral(q, frame.times))
    if not info >= c0:
        raise FisherDegenerateError(f"Fisher information degenerate: {info!r} < {c0!r}")
    return FisherReport(info, q, float(theta), regime)


# ---------------------------------------------------------------------------
# Output


def write_profile_csv(filename, values) -> None:
    """CSV ``theta,value,kind`` for a list of LikelihoodValue."""
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "value", "kind"])
        for v in values:
            w.writerow([repr(float(v.theta)), repr(float(v.value)), v.kind.value])
