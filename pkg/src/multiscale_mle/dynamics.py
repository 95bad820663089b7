"""Euler-Maruyama simulation and the averaged (limiting) ODE."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, SimulationError
from .model import ModelSpec, Path, Regime, ScaleParams
from .torus import TorusGrid, has_gibbs_form, homogenized_weights, invariant_density, solve_cell_problem

log = logging.getLogger(__name__)

DEFAULT_TARGET_ERROR = 1e-3
_CHUNK = 1 << 16


def step_bound(scale: ScaleParams, target_error: float = DEFAULT_TARGET_ERROR) -> float:
    """Largest Euler step keeping the weak error bound step * eps / delta**2 at target."""
    if not target_error > 0:
        raise ValueError("target_error must be positive")
    return target_error * scale.delta**2 / scale.epsilon


def steps_for(horizon: float, bound: float) -> int:
    """Smallest step count whose uniform step does not exceed ``bound``."""
    return max(1, math.ceil(horizon / bound * (1.0 - 1e-12)))


@dataclass(frozen=True)
class SimConfig:
    x0: float
    horizon: float
    step: float
    seed: int
    store_stride: int = 1
    stream: tuple[int, ...] = ()
    allow_coarse_step: bool = False

    def __post_init__(self):
        if not (self.horizon > 0 and self.step > 0):
            raise ConfigError("horizon and step must be positive")
        if not math.isfinite(self.x0):
            raise ConfigError("x0 must be finite")
        if self.store_stride < 1:
            raise ConfigError("store_stride must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        n = round(self.horizon / self.step)
        if n < 1 or not math.isclose(n * self.step, self.horizon, rel_tol=1e-12):
            raise ConfigError(f"horizon {self.horizon} is not an integer multiple of step {self.step}")
        if n % self.store_stride:
            raise ConfigError("store_stride must divide the number of steps")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.step)


def make_rng(seed: int, stream: tuple[int, ...] = ()) -> np.random.Generator:
    """Counter-based Philox generator for substream ``stream`` of ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


# ---------------------------------------------------------------------------
# Euler kernels

_KERNELS: dict[tuple, Callable] = {}


def _python_kernel(b, c, s):
    def advance(x, theta, ratio, delta, dt, amp, xi, out, k0, stride):
        for i in range(xi.size):
            y = x / delta
            x = x + (ratio * float(b(theta, x, y)) + float(c(theta, x, y))) * dt + amp * float(s(x, y)) * xi[i]
            k = k0 + i + 1
            if not math.isfinite(x):
                return x, k
            if k % stride == 0:
                out[k // stride] = x
        return x, -1

    return advance


def _numba_kernel(b, c, s):
    import numba

    bj, cj, sj = numba.njit(b), numba.njit(c), numba.njit(s)

    @numba.njit
    def advance(x, theta, ratio, delta, dt, amp, xi, out, k0, stride):
        for i in range(xi.size):
            y = x / delta
            x = x + (ratio * bj(theta, x, y) + cj(theta, x, y)) * dt + amp * sj(x, y) * xi[i]
            k = k0 + i + 1
            if not np.isfinite(x):
                return x, k
            if k % stride == 0:
                out[k // stride] = x
        return x, -1

    # Compile eagerly so an uncompilable coefficient falls back cleanly.
    advance(0.0, 1.0, 1.0, 1.0, 1e-3, 0.0, np.zeros(1), np.zeros(2), 0, 1)
    return advance


def euler_kernel(model: ModelSpec):
    key = (model.drift_b, model.drift_c, model.sigma)
    kernel = _KERNELS.get(key)
    if kernel is None:
        try:
            kernel = _numba_kernel(*key)
        except Exception as exc:  # numba missing or coefficient not compilable
            log.warning("falling back to the pure-Python Euler loop for %s: %s", model.name, exc)
            kernel = _python_kernel(*key)
        _KERNELS[key] = kernel
    return kernel


def simulate_euler(
    model: ModelSpec,
    scale: ScaleParams,
    theta0: float,
    cfg: SimConfig,
    target_error: float = DEFAULT_TARGET_ERROR,
    noise_scale: float = 1.0,
    normals: np.ndarray | None = None,
) -> Path:
    """Euler-Maruyama path of the multiscale SDE.

    ``noise_scale`` multiplies sigma (0 switches the noise off).  ``normals``
    supplies the standard normal draws instead of the seeded generator, which
    lets callers couple paths at different steps.  Same ``(seed, stream)``
    gives a bit-identical path.
    """
    bound = step_bound(scale, target_error)
    if cfg.step > bound * (1 + 1e-9) and not cfg.allow_coarse_step:
        raise ConfigError(f"step {cfg.step:g} exceeds the step bound {bound:g}; pass allow_coarse_step to override")
    n = cfg.n_steps
    stride = cfg.store_stride
    out = np.empty(n // stride + 1)
    out[0] = cfg.x0
    advance = euler_kernel(model)
    if normals is not None:
        normals = np.asarray(normals, dtype=float)
        if normals.shape != (n,):
            raise ConfigError(f"expected {n} normal draws, got shape {normals.shape}")
    rng = make_rng(cfg.seed, cfg.stream)
    amp = noise_scale * math.sqrt(scale.epsilon * cfg.step)
    x = float(cfg.x0)
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        xi = rng.standard_normal(m) if normals is None else normals[done : done + m]
        x, bad = advance(x, float(theta0), scale.ratio, scale.delta, cfg.step, amp, xi, out, done, stride)
        if bad >= 0:
            raise SimulationError(f"blow-up at step {bad}")
        done += m
    return Path(cfg.step * stride, out)


# ---------------------------------------------------------------------------
# Averaged dynamics


def averaged_drift(
    model: ModelSpec,
    scale: ScaleParams,
    theta: float,
    x: float,
    grid: TorusGrid | None = None,
) -> float:
    """Fast-variable average of the regime's effective drift at (theta, x)."""
    grid = grid or TorusGrid.for_model(model)
    y = grid.nodes
    c = model.c(theta, x, y)
    if scale.regime is Regime.REGIME1:
        if has_gibbs_form(model):
            return float(np.dot(homogenized_weights(model, grid), c))
        cell = solve_cell_problem(model, theta, x, grid)
        return cell.density.expect((1.0 + cell.dchi_dy) * c)
    mu = invariant_density(model, scale.regime, theta, x, grid, scale.gamma)
    if scale.regime is Regime.REGIME2:
        return mu.expect(scale.gamma * model.b(theta, x, y) + c)
    return mu.expect(c)


def solve_limiting_ode(
    model: ModelSpec,
    scale: ScaleParams,
    theta: float,
    x0: float,
    T: float,
    ode_step: float,
    grid: TorusGrid | None = None,
) -> Path:
    """Classical RK4 for dx/dt = averaged_drift(x)."""
    if not ode_step > 0:
        raise ValueError("ode_step must be positive")
    n = round(T / ode_step)
    if n < 1 or not math.isclose(n * ode_step, T, rel_tol=1e-9):
        raise ValueError("T must be an integer multiple of ode_step")
    grid = grid or TorusGrid.for_model(model)

    def f(x):
        return averaged_drift(model, scale, theta, x, grid)

    xs = np.empty(n + 1)
    xs[0] = x = float(x0)
    h = ode_step
    for k in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(x):
            raise SimulationError(f"limiting ODE blow-up at step {k + 1}")
        xs[k + 1] = x
    return Path(ode_step, xs)


# ---------------------------------------------------------------------------
# Path CSV


def write_path_csv(path: Path, filename) -> None:
    """Header ``t,x``; shortest round-trip decimal for every value."""
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x"])
        for t, x in zip(path.times, path.values):
            w.writerow([repr(float(t)), repr(float(x))])


def read_path_csv(filename, step: float | None = None) -> Path:
    """Load a path written by :func:`write_path_csv`.

    The step is inferred from the time column; when ``step`` is given it must
    agree with the file, otherwise ConfigError is raised.
    """
    try:
        with open(filename, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read path file {filename}: {exc}") from None
    if not rows or [h.strip() for h in rows[0]] != ["t", "x"]:
        raise ConfigError(f"{filename}: expected header 't,x'")
    body = [r for r in rows[1:] if r]
    if len(body) < 2:
        raise ConfigError(f"{filename}: a path needs at least two rows")
    try:
        t = np.array([float(r[0]) for r in body])
        x = np.array([float(r[1]) for r in body])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{filename}: malformed row ({exc})") from None
    file_step = (t[-1] - t[0]) / (t.size - 1)
    if not file_step > 0 or not np.allclose(np.diff(t), file_step, rtol=1e-9, atol=0.0):
        raise ConfigError(f"{filename}: time column is not uniformly spaced")
    if step is not None and not math.isclose(step, file_step, rel_tol=1e-9):
        raise ConfigError(f"{filename}: step {file_step!r} in file disagrees with configured step {step!r}")
    try:
        return Path(step if step is not None else file_step, x)
    except ValueError as exc:
        raise ConfigError(f"{filename}: {exc}") from None
