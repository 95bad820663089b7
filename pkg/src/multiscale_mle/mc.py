"""Monte Carlo harness: replications, aggregation, histograms and epsilon sweeps.

Replication ``r`` draws its noise from substream ``(r,)`` of the master seed,
so results do not depend on the number of workers or their scheduling.
"""

from __future__ import annotations

import csv
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .config import ExperimentConfig
from .dynamics import SimConfig, simulate_euler
from .errors import ConfigError, MonteCarloError, NumericalError
from .estimate import LimitingReference, estimate_path, limiting_reference
from .model import Regime, ScaleParams, classify_regime

MAX_FAILURE_FRACTION = 0.10
Z68, Z95 = 1.0, 1.96
WORKERS_ENV = "MSMLE_WORKERS"


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {value!r}")
    return n


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    curve_x: np.ndarray
    curve_density: np.ndarray
    degenerate: bool = False


def histogram_with_theory(estimates, center: float, variance: float, epsilon: float, bins: int = 20) -> Histogram:
    """Equal-width histogram over the padded data range plus a normal density curve.

    The curve has mean ``center`` and variance ``epsilon * variance`` and is
    sampled at 200 points over the histogram span.  A zero-width data range
    gives a single occupied bin and an empty curve, flagged ``degenerate``.
    """
    x = np.asarray(estimates, float)
    if x.size < 20:
        raise ValueError("histogram needs at least 20 estimates")
    if bins < 1:
        raise ValueError("bins must be positive")
    if not variance > 0:
        raise ValueError("variance must be positive")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        pad = 0.05 * max(1.0, abs(lo))
        edges = np.linspace(lo - pad, hi + pad, bins + 1)
        counts, _ = np.histogram(x, edges)
        return Histogram(edges, counts, np.empty(0), np.empty(0), degenerate=True)
    pad = 0.05 * (hi - lo)
    counts, edges = np.histogram(x, bins=bins, range=(lo - pad, hi + pad))
    grid = np.linspace(edges[0], edges[-1], 200)
    dens = norm.pdf(grid, loc=center, scale=math.sqrt(epsilon * variance))
    return Histogram(edges, counts, grid, dens)


@dataclass(frozen=True, eq=False)
class MCSummary:
    theta0: float
    epsilon: float
    delta: float
    M: int
    estimates: np.ndarray
    raw_estimates: np.ndarray
    residuals: np.ndarray
    failures: int
    mean: float
    sd: float
    ci68: tuple[float, float]
    ci95: tuple[float, float]
    histogram: Histogram | None
    variance: float | None
    factor: float

    @property
    def successes(self) -> int:
        return int(self.estimates.size)

    def csv_row(self) -> list[str]:
        vals = [self.theta0, self.epsilon, self.delta, self.M, self.mean, self.sd, *self.ci68, *self.ci95, self.failures]
        return [repr(v) if isinstance(v, float) else str(v) for v in vals]


SUMMARY_HEADER = [
    "theta0",
    "epsilon",
    "delta",
    "M",
    "mean",
    "sd",
    "ci68_lo",
    "ci68_hi",
    "ci95_lo",
    "ci95_hi",
    "failures",
]


@dataclass(frozen=True)
class _Task:
    config: ExperimentConfig
    scale: ScaleParams
    theta0: float
    step: float
    index: int
    stream: tuple[int, ...]
    reference: LimitingReference | None


def _replicate(task: _Task):
    """One simulate-and-estimate run; numerical failures are returned, not raised."""
    cfg = task.config
    model = cfg.model()
    sim = SimConfig(
        x0=cfg.x0,
        horizon=cfg.horizon,
        step=task.step,
        seed=cfg.seed,
        store_stride=cfg.stride,
        stream=task.stream,
        allow_coarse_step=cfg.allow_coarse_step,
    )
    try:
        path = simulate_euler(model, task.scale, task.theta0, sim, cfg.target_error)
        rep = estimate_path(path, model, task.scale, cfg.kind, reference=task.reference)
    except NumericalError as exc:
        return task.index, None, str(exc)
    z = rep.standardized_residual
    return task.index, (rep.theta_hat, rep.theta_tilde, math.nan if z is None else z), None


def _reference_or_none(config: ExperimentConfig, scale: ScaleParams, theta0: float):
    try:
        return limiting_reference(config.model(), scale, theta0, config.x0, config.horizon, config.ode_step)
    except ConfigError:
        return None


def run_replications(
    config: ExperimentConfig,
    M: int | None = None,
    master_seed: int | None = None,
    workers: int | None = None,
    theta0: float | None = None,
    scale: ScaleParams | None = None,
    identical_streams: bool = False,
) -> MCSummary:
    """Simulate, estimate and correct M times, then aggregate.

    ``identical_streams`` makes every replication reuse substream ``(0,)``
    (a test hook for degenerate replication).
    """
    M = config.M if M is None else M
    if M < 2:
        raise ConfigError("M must be at least 2")
    if master_seed is not None:
        config = config.replace(seed=master_seed)
    theta0 = config.theta_true[0] if theta0 is None else theta0
    scale = scale or config.scale
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ConfigError("workers must be positive")
    step = config.resolved_step(scale)
    reference = _reference_or_none(config, scale, theta0)
    tasks = [
        _Task(config, scale, theta0, step, r, (0,) if identical_streams else (r,), reference) for r in range(M)
    ]
    if workers == 1:
        results = [_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=max(1, M // (4 * workers))))
    results.sort(key=lambda item: item[0])
    ok = [v for _, v, err in results if err is None]
    failures = M - len(ok)
    if failures > MAX_FAILURE_FRACTION * M:
        first = next(err for _, _, err in results if err is not None)
        raise MonteCarloError(f"{failures} of {M} replications failed (first: {first})")
    if len(ok) < 2:
        raise MonteCarloError("fewer than two successful replications")
    arr = np.array(ok)
    return summarize(theta0, scale, arr[:, 1], arr[:, 0], arr[:, 2], failures, M, reference, config.bins)


def summarize(theta0, scale, estimates, raw, residuals, failures, M, reference, bins) -> MCSummary:
    estimates = np.asarray(estimates, float)
    # exact-rational statistics: identical estimates give sd == 0.0 exactly
    mean = statistics.fmean(estimates.tolist())
    sd = statistics.stdev(estimates.tolist())
    factor = reference.factor if reference is not None else 1.0
    variance = None
    hist = None
    if reference is not None:
        # The headline estimator is theta_hat / factor.
        variance = reference.variance / factor**2
        if estimates.size >= 20:
            hist = histogram_with_theory(estimates, mean, variance, scale.epsilon, bins)
    return MCSummary(
        theta0=float(theta0),
        epsilon=scale.epsilon,
        delta=scale.delta,
        M=M,
        estimates=estimates,
        raw_estimates=np.asarray(raw, float),
        residuals=np.asarray(residuals, float),
        failures=failures,
        mean=mean,
        sd=sd,
        ci68=(mean - Z68 * sd, mean + Z68 * sd),
        ci95=(mean - Z95 * sd, mean + Z95 * sd),
        histogram=hist,
        variance=variance,
        factor=factor,
    )


# ---------------------------------------------------------------------------
# Epsilon sweeps


@dataclass(frozen=True)
class Coupling:
    """Rule delta = delta(eps).

    ``square``: eps^2; ``power``: eps^exponent; ``sqrt``: scale * eps^(1/2);
    ``ratio``: eps / scale (Regime 2 with gamma = scale); ``fixed``: scale.
    """

    rule: str
    exponent: float = 2.0
    scale: float = 1.0

    def __post_init__(self):
        if self.rule not in {"square", "power", "sqrt", "ratio", "fixed"}:
            raise ConfigError(f"unknown coupling {self.rule!r}")
        if not self.scale > 0:
            raise ConfigError("coupling scale must be positive")

    @classmethod
    def parse(cls, text: str) -> "Coupling":
        """``square``, ``power:1.5``, ``sqrt:0.5``, ``ratio:1``, ``fixed:0.01``."""
        rule, _, arg = text.partition(":")
        rule = rule.strip().lower()
        try:
            value = float(arg) if arg else None
        except ValueError:
            raise ConfigError(f"bad coupling argument in {text!r}") from None
        if rule == "power":
            return cls(rule, exponent=2.0 if value is None else value)
        if rule in {"sqrt", "ratio", "fixed"}:
            return cls(rule, scale=1.0 if value is None else value)
        return cls(rule)

    def delta(self, epsilon: float) -> float:
        if self.rule == "square":
            return epsilon**2
        if self.rule == "power":
            return epsilon**self.exponent
        if self.rule == "sqrt":
            return self.scale * math.sqrt(epsilon)
        if self.rule == "ratio":
            return epsilon / self.scale
        return self.scale

    def scale_params(self, epsilon: float, regime: Regime) -> ScaleParams:
        gamma = self.scale if self.rule == "ratio" else None
        if regime is Regime.REGIME2 and gamma is None:
            raise ConfigError("a Regime 2 sweep needs the ratio coupling")
        return ScaleParams(epsilon, self.delta(epsilon), regime, gamma)


@dataclass(frozen=True, eq=False)
class SweepResult:
    rows: list[MCSummary]
    median_abs_error: list[float]
    median_nonincreasing: bool
    sd_ratios: list[float]
    expected_sd_ratios: list[float]
    advisory_regimes: list[Regime]

    def sd_ratio_within(self, rel_tol: float = 0.3) -> bool:
        return all(abs(r - e) <= rel_tol * e for r, e in zip(self.sd_ratios, self.expected_sd_ratios))


def epsilon_sweep(
    config: ExperimentConfig,
    epsilons,
    coupling: Coupling,
    M: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
    theta0: float | None = None,
) -> SweepResult:
    """One MCSummary per epsilon with consistency and rate diagnostics."""
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise ConfigError("epsilon list is empty")
    theta0 = config.theta_true[0] if theta0 is None else theta0
    rows, advisory = [], []
    for eps in epsilons:
        scale = coupling.scale_params(eps, config.regime)
        advisory.append(classify_regime(scale.epsilon, scale.delta))
        rows.append(run_replications(config, M, seed, workers, theta0, scale))
    med = [float(np.median(np.abs(r.estimates - theta0))) for r in rows]
    ratios = [a.sd / b.sd if b.sd > 0 else math.inf for a, b in zip(rows, rows[1:])]
    expected = [math.sqrt(a / b) for a, b in zip(epsilons, epsilons[1:])]
    nonincreasing = all(b <= a for a, b in zip(med, med[1:]))
    return SweepResult(rows, med, nonincreasing, ratios, expected, advisory)


# ---------------------------------------------------------------------------
# Output files


def _write(filename, header, rows) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_summary_csv(filename, summaries) -> None:
    _write(filename, SUMMARY_HEADER, [s.csv_row() for s in summaries])


def write_histogram_csv(filename, hist: Histogram) -> None:
    rows = [[repr(float(a)), repr(float(b)), str(int(c))] for a, b, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts)]
    _write(filename, ["bin_lo", "bin_hi", "count"], rows)


def write_theory_csv(filename, hist: Histogram) -> None:
    rows = [[repr(float(x)), repr(float(d))] for x, d in zip(hist.curve_x, hist.curve_density)]
    _write(filename, ["x", "density"], rows)
