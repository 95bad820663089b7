"""Point estimation: closed-form and argmax MLEs, the homogenization
correction, and CLT standardization."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .dynamics import solve_limiting_ode
from .errors import ConfigError, EstimationError
from .likelihood import LikelihoodKind, fisher_information, path_likelihood_function
from .model import ModelSpec, Path, Regime, ScaleParams
from .torus import TorusGrid, has_gibbs_form, homogenization_factor

GOLDEN_TOL = 1e-8
BOUNDARY_TOL = 1e-6
SCAN_POINTS = 33
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class BoundaryMaximizerWarning(UserWarning):
    """The maximizer sits on the edge of the (open) parameter set."""


@dataclass(frozen=True)
class LinearSums:
    """Weighted path sums behind the closed-form estimators.

    With ``w = 1/sigma^2`` and ``c = theta * c1``:
    ``drift_increment = sum w c1 dx``, ``cross = sum w b c1 step``,
    ``energy = sum w c1^2 step``.
    """

    drift_increment: float
    cross: float
    energy: float


def linear_sums(path: Path, model: ModelSpec, scale: ScaleParams) -> LinearSums:
    if not model.linear_in_theta:
        raise ConfigError(f"model {model.name!r} is not linear in theta; use mle_argmax")
    x = path.values[:-1]
    y = x / scale.delta
    s = model.sig(x, y)
    w = 1.0 / (s * s)
    c1 = model.c(1.0, x, y)
    wc1 = w * c1
    b = model.b(1.0, x, y)
    return LinearSums(
        drift_increment=math.fsum(wc1 * np.diff(path.values)),
        cross=path.step * math.fsum(wc1 * b),
        energy=path.step * math.fsum(wc1 * c1),
    )


def mle_closed_form(
    path: Path,
    model: ModelSpec,
    scale: ScaleParams,
    kind=LikelihoodKind.PSEUDO,
    include_fast: bool = True,
) -> float:
    """Maximizer of the exact or pseudo likelihood for c = theta * c1, b theta-free.

    Pseudo: [(r^2 + 1) S_dx - r S_bc] / [(r^2 + 1) S_cc] with r = delta/eps.
    Exact:  [S_dx - (eps/delta) S_bc] / S_cc.
    ``include_fast=False`` treats b as zero.
    """
    kind = LikelihoodKind.parse(kind)
    sums = linear_sums(path, model, scale)
    if not sums.energy > 0:
        raise EstimationError("integral of the squared slow drift vanishes; the estimator is undefined")
    cross = sums.cross if include_fast else 0.0
    if kind is LikelihoodKind.EXACT:
        return (sums.drift_increment - scale.ratio * cross) / sums.energy
    if kind is LikelihoodKind.PSEUDO:
        r = scale.delta / scale.epsilon
        k = r * r + 1.0
        return (k * sums.drift_increment - r * cross) / (k * sums.energy)
    raise ConfigError(f"closed form exists for exact or pseudo likelihoods, not {kind.value}")


def correction_factor(model: ModelSpec, grid: TorusGrid | None = None) -> float:
    """lambda^2 / (Z Zhat) for a gradient fast drift; 1 when b vanishes."""
    if model.fast_drift_vanishes:
        return 1.0
    if not has_gibbs_form(model):
        raise ConfigError("the homogenization correction needs a gradient fast drift with constant sigma")
    grid = grid or TorusGrid.for_model(model)
    factor = homogenization_factor(model.potential, model.diffusion_constant(), grid)
    if not factor > 0:
        raise EstimationError(f"non-positive correction factor {factor!r}")
    return factor


def correct_estimator(theta_hat: float, model: ModelSpec, grid: TorusGrid | None = None) -> tuple[float, float]:
    """(theta_hat / factor, factor)."""
    factor = correction_factor(model, grid)
    return theta_hat / factor, factor


# ---------------------------------------------------------------------------
# Bounded maximization


def golden_section_max(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> float:
    """Maximizer of a unimodal f on [lo, hi] to absolute tolerance ``tol``."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _is_unimodal(values: np.ndarray) -> bool:
    k = int(np.argmax(values))
    return bool(np.all(np.diff(values[: k + 1]) >= 0) and np.all(np.diff(values[k:]) <= 0))


def _grid_refine(f, lo: float, hi: float, tol: float) -> float:
    while hi - lo > tol:
        grid = np.linspace(lo, hi, SCAN_POINTS)
        k = int(np.argmax([f(t) for t in grid]))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, SCAN_POINTS - 1)]
    return 0.5 * (lo + hi)


def maximize_bounded(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> float:
    """Pre-scan on 33 points, then golden section around the best scan point.

    A non-unimodal scan switches to repeated grid refinement.
    """
    if not lo < hi:
        raise ConfigError(f"invalid search interval [{lo}, {hi}]")
    grid = np.linspace(lo, hi, SCAN_POINTS)
    values = np.array([f(t) for t in grid])
    if not np.all(np.isfinite(values)):
        raise EstimationError("likelihood is not finite on the search grid")
    k = int(np.argmax(values))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, SCAN_POINTS - 1)]
    if _is_unimodal(values):
        best = golden_section_max(f, a, b, tol)
    else:
        best = _grid_refine(f, a, b, tol)
    if min(best - lo, hi - best) <= BOUNDARY_TOL:
        warnings.warn(f"boundary maximizer {best!r} on [{lo}, {hi}]", BoundaryMaximizerWarning, stacklevel=3)
    return best


def mle_argmax(
    path: Path,
    model: ModelSpec,
    scale: ScaleParams,
    kind=LikelihoodKind.PSEUDO,
    theta_domain: tuple[float, float] | None = None,
    tol: float = GOLDEN_TOL,
) -> float:
    """Numerical maximizer of the exact or pseudo likelihood over the domain."""
    lo, hi = theta_domain or model.theta_domain
    lo_m, hi_m = model.theta_domain
    if lo < lo_m or hi > hi_m:
        raise ConfigError(f"search interval [{lo}, {hi}] leaves the model domain {model.theta_domain}")
    f = path_likelihood_function(path, model, scale, kind)
    return maximize_bounded(f, lo, hi, tol)


# ---------------------------------------------------------------------------
# CLT standardization


def standardize(theta_hat: float, center: float, variance: float, epsilon: float) -> float:
    """(theta_hat - center) / sqrt(eps * variance)."""
    if not variance > 0:
        raise ValueError("variance must be positive")
    return (theta_hat - center) / math.sqrt(epsilon * variance)


def bias_center(path: Path, model: ModelSpec, scale: ScaleParams, theta0: float) -> float:
    """Path-dependent center of the pseudo MLE for a gradient fast drift.

    theta0 + (eps/delta) S_bc / ((r^2 + 1) S_cc) in the notation of
    :class:`LinearSums`; for c = -theta V' and b = -Q' the cross sum is
    the integral of V'(x) Q'(x/delta).
    """
    sums = linear_sums(path, model, scale)
    if not sums.energy > 0:
        raise EstimationError("integral of the squared slow drift vanishes")
    r = scale.delta / scale.epsilon
    return theta0 + scale.ratio * sums.cross / ((r * r + 1.0) * sums.energy)


def slow_energy(ode_path: Path, model: ModelSpec) -> float:
    """Time integral of c1(x_s)^2 / sigma^2 along an averaged path (c1 y-free)."""
    xs = ode_path.values
    y0 = np.zeros_like(xs)
    s = model.sig(xs, y0)
    c1 = model.c(1.0, xs, y0)
    return float(simpson(c1 * c1 / (s * s), x=ode_path.times))


@dataclass(frozen=True, eq=False)
class LimitingReference:
    """Quantities of the averaged path at theta0 shared by all replications."""

    theta0: float
    ode_path: Path
    factor: float
    variance: float
    fisher_info: float | None
    biased_center: bool


def limiting_reference(
    model: ModelSpec,
    scale: ScaleParams,
    theta0: float,
    x0: float,
    horizon: float,
    ode_step: float = 1e-3,
    grid: TorusGrid | None = None,
) -> LimitingReference:
    """Averaged path at theta0 plus the asymptotic variance of the estimator.

    With b = 0 the variance is the inverse Fisher information of the regime;
    with a gradient fast drift in Regime 1 it is sigma^2 / int c1(x_s)^2 ds
    and residuals are taken about the path-dependent center.
    """
    grid = grid or TorusGrid.for_model(model)
    ode = solve_limiting_ode(model, scale, theta0, x0, horizon, ode_step, grid)
    factor = correction_factor(model, grid) if scale.regime is Regime.REGIME1 else 1.0
    if model.fast_drift_vanishes:
        info = fisher_information(ode, model, theta0, scale.regime, grid, scale.gamma).info
        return LimitingReference(theta0, ode, factor, 1.0 / info, info, False)
    if scale.regime is Regime.REGIME1 and has_gibbs_form(model) and model.linear_in_theta:
        return LimitingReference(theta0, ode, factor, 1.0 / slow_energy(ode, model), None, True)
    raise ConfigError("no asymptotic variance available for this model and regime")


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class EstimateReport:
    theta_hat: float
    theta_tilde: float
    correction_factor: float
    kind: str
    method: str
    fisher_info: float | None = None
    asymptotic_sd: float | None = None
    center: float | None = None
    standardized_residual: float | None = None

    def record(self) -> str:
        """Flat ``key=value`` lines."""
        return "\n".join(f"{k}={_fmt(v)}" for k, v in dataclasses.asdict(self).items())

    @staticmethod
    def csv_header() -> list[str]:
        return [f.name for f in dataclasses.fields(EstimateReport)]

    def csv_row(self) -> list[str]:
        return [_fmt(v) for v in dataclasses.astuple(self)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def estimate_path(
    path: Path,
    model: ModelSpec,
    scale: ScaleParams,
    kind=LikelihoodKind.PSEUDO,
    grid: TorusGrid | None = None,
    reference: LimitingReference | None = None,
) -> EstimateReport:
    """theta_hat, the corrected estimate and, given a reference, the CLT residual."""
    kind = LikelihoodKind.parse(kind)
    grid = grid or TorusGrid.for_model(model)
    if model.linear_in_theta:
        theta_hat = mle_closed_form(path, model, scale, kind)
        method = "closed-form"
    else:
        theta_hat = mle_argmax(path, model, scale, kind)
        method = "golden-section"
    corrected = (
        scale.regime is Regime.REGIME1 and kind is LikelihoodKind.PSEUDO and not model.fast_drift_vanishes
    )
    factor = correction_factor(model, grid) if corrected else 1.0
    theta_tilde = theta_hat / factor
    if reference is None:
        return EstimateReport(theta_hat, theta_tilde, factor, kind.value, method)
    if reference.biased_center:
        center = bias_center(path, model, scale, reference.theta0)
    else:
        center = reference.theta0
    sd = math.sqrt(scale.epsilon * reference.variance)
    z = standardize(theta_hat, center, reference.variance, scale.epsilon)
    return EstimateReport(
        theta_hat, theta_tilde, factor, kind.value, method, reference.fisher_info, sd, center, z
    )
