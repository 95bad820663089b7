"""Periodic-cell computations on a uniform grid of the one-dimensional torus.

Densities, partition constants, the cell problem ``L1 chi = -b`` and the
Poisson problem ``L1 Phi = -<b_theta0, c_theta>_alpha``.  Differential
operators use central finite differences on the periodic grid (fourth order
by default, second order on request); the rank deficiency of the generator
is removed by replacing one row with the normalization condition.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    CenteringError,
    DegenerateFlowError,
    PotentialOverflowError,
    StationarySolveError,
)
from .model import ModelSpec, Regime, ScaleParams

DEFAULT_POINTS = 512
DEFAULT_ORDER = 4
CENTERING_TOL = 1e-8
EXP_GUARD = 700.0

_STENCILS = {
    2: (
        {-1: -0.5, 1: 0.5},
        {-1: 1.0, 0: -2.0, 1: 1.0},
    ),
    4: (
        {-2: 1 / 12, -1: -8 / 12, 1: 8 / 12, 2: -1 / 12},
        {-2: -1 / 12, -1: 16 / 12, 0: -30 / 12, 1: 16 / 12, 2: -1 / 12},
    ),
}


@dataclass(frozen=True)
class TorusGrid:
    """Nodes y_j = j * period / n; rectangle weights period / n."""

    n_points: int = DEFAULT_POINTS
    period: float = 2.0 * np.pi

    def __post_init__(self):
        if self.n_points < 16 or self.n_points % 2:
            raise ValueError("torus grid needs an even number of points >= 16")
        if not self.period > 0:
            raise ValueError("torus period must be positive")

    @property
    def spacing(self) -> float:
        return self.period / self.n_points

    weight = spacing

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) * self.spacing

    def integrate(self, values) -> float:
        """Periodic trapezoid (= rectangle) rule."""
        return float(np.sum(values) * self.spacing)

    @classmethod
    def for_model(cls, model: ModelSpec, n_points: int = DEFAULT_POINTS) -> "TorusGrid":
        return cls(n_points, model.period_lambda)


@dataclass(frozen=True, eq=False)
class TorusDensity:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if not np.all(v > 0):
            raise StationarySolveError("stationary solve failed: density not strictly positive")
        mass = self.grid.integrate(v)
        if abs(mass - 1.0) > 1e-10:
            raise StationarySolveError(f"stationary solve failed: mass {mass!r} != 1")
        object.__setattr__(self, "values", v)

    def expect(self, f) -> float:
        """Integral of grid values f against the density."""
        return self.grid.integrate(np.asarray(f) * self.values)


@dataclass(frozen=True, eq=False)
class CellSolution:
    grid: TorusGrid
    chi: np.ndarray
    dchi_dy: np.ndarray
    density: TorusDensity
    method: str

    @property
    def homogenized_factor(self) -> float:
        """Integral of (1 + dchi/dy) against the invariant density."""
        return self.density.expect(1.0 + self.dchi_dy)


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    grid: TorusGrid
    phi: np.ndarray
    dphi_dy: np.ndarray
    density: TorusDensity
    residual: float


# ---------------------------------------------------------------------------
# Discrete operators


@functools.lru_cache(maxsize=32)
def _difference_matrices(n: int, spacing: float, order: int):
    try:
        first, second = _STENCILS[order]
    except KeyError:
        raise ValueError(f"finite-difference order must be 2 or 4, got {order}") from None
    idx = np.arange(n)

    def build(stencil, scale):
        rows, cols, vals = [], [], []
        for offset, coef in stencil.items():
            rows.append(idx)
            cols.append((idx + offset) % n)
            vals.append(np.full(n, coef * scale))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    return build(first, 1.0 / spacing), build(second, 1.0 / spacing**2)


def derivative(grid: TorusGrid, values, order: int = DEFAULT_ORDER) -> np.ndarray:
    d1, _ = _difference_matrices(grid.n_points, grid.spacing, order)
    return d1 @ np.asarray(values, float)


def generator_matrix(grid: TorusGrid, drift, diffusion, order: int = DEFAULT_ORDER) -> sp.csr_matrix:
    """Discrete ``drift d/dy + (diffusion / 2) d^2/dy^2`` on the torus."""
    d1, d2 = _difference_matrices(grid.n_points, grid.spacing, order)
    drift = np.broadcast_to(np.asarray(drift, float), (grid.n_points,))
    diffusion = np.broadcast_to(np.asarray(diffusion, float), (grid.n_points,))
    return (sp.diags(drift) @ d1 + sp.diags(0.5 * diffusion) @ d2).tocsr()


def _solve_with_row(matrix: sp.csr_matrix, rhs: np.ndarray, row: np.ndarray, target: float) -> np.ndarray:
    """Solve ``matrix u = rhs`` with row 0 replaced by ``row . u = target``."""
    system = sp.vstack([sp.csr_matrix(row.reshape(1, -1)), matrix[1:]]).tocsc()
    b = np.array(rhs, float)
    b[0] = target
    try:
        with np.errstate(all="ignore"):
            u = spla.spsolve(system, b)
    except RuntimeError as exc:  # singular factorization
        raise StationarySolveError(f"stationary solve failed: {exc}") from None
    if not np.all(np.isfinite(u)):
        raise StationarySolveError("stationary solve failed: singular system")
    return u


# ---------------------------------------------------------------------------
# Gibbs law and partition constants


def _potential_values(Q, D: float, grid: TorusGrid) -> np.ndarray:
    if not D > 0:
        raise ValueError("temperature D must be positive")
    q = np.broadcast_to(np.asarray(Q(grid.nodes), float), (grid.n_points,))
    if np.max(np.abs(q)) / D > EXP_GUARD:
        raise PotentialOverflowError(f"|Q/D| exceeds {EXP_GUARD}; exponentials would overflow")
    return q


def gibbs_density(Q, D: float, grid: TorusGrid) -> TorusDensity:
    """Density exp(-Q/D) / Z on the grid."""
    q = _potential_values(Q, D, grid)
    w = np.exp(-q / D)
    return TorusDensity(grid, w / grid.integrate(w))


def partition_constants(Q, D: float, grid: TorusGrid) -> tuple[float, float]:
    """Z = int exp(-Q/D) dy and Zhat = int exp(Q/D) dy."""
    q = _potential_values(Q, D, grid)
    return grid.integrate(np.exp(-q / D)), grid.integrate(np.exp(q / D))


def homogenization_factor(Q, D: float, grid: TorusGrid) -> float:
    """lambda^2 / (Z Zhat); equals 1 for a flat potential and is < 1 otherwise."""
    Z, Zhat = partition_constants(Q, D, grid)
    return grid.period**2 / (Z * Zhat)


# ---------------------------------------------------------------------------
# Invariant measures of the fast operators


def has_gibbs_form(model: ModelSpec) -> bool:
    return model.potential is not None and model.sigma_is_constant


def _fd_stationary(grid: TorusGrid, drift, diffusion, order: int) -> TorusDensity:
    L = generator_matrix(grid, drift, diffusion, order)
    weights = np.full(grid.n_points, grid.spacing)
    m = _solve_with_row(L.T.tocsr(), np.zeros(grid.n_points), weights, 1.0)
    if not np.all(m > 0):
        raise StationarySolveError("stationary solve failed: negative density from finite differences")
    m = m / grid.integrate(m)
    return TorusDensity(grid, m)


def invariant_density(
    model: ModelSpec,
    regime: Regime,
    theta: float,
    x: float,
    grid: TorusGrid,
    gamma: float | None = None,
    order: int = DEFAULT_ORDER,
) -> TorusDensity:
    """Invariant density of the regime's fast operator at frozen (theta, x)."""
    y = grid.nodes
    regime = Regime.parse(regime)
    if regime is Regime.REGIME1:
        if has_gibbs_form(model):
            return gibbs_density(model.potential, model.diffusion_constant(), grid)
        s = model.sig(x, y)
        return _fd_stationary(grid, model.b(theta, x, y), s * s, order)
    if regime is Regime.REGIME2:
        if gamma is None:
            raise ValueError("Regime 2 needs gamma")
        s = model.sig(x, y)
        drift = gamma * model.b(theta, x, y) + model.c(theta, x, y)
        return _fd_stationary(grid, drift, gamma * s * s, order)
    # Regime 3: time-average law of dz/dt = c(theta, x, z), density ~ 1/|c|.
    c = model.c(theta, x, y)
    scale = float(np.max(np.abs(c)))
    if np.ptp(c) <= 1e-13 * max(1.0, scale):
        # y-free speed: every point is visited uniformly.
        return TorusDensity(grid, np.full(grid.n_points, 1.0 / grid.period))
    if np.min(c) * np.max(c) <= 0 or np.min(np.abs(c)) <= 1e-12 * scale:
        raise DegenerateFlowError(f"degenerate fast flow: c(theta={theta}, x={x}, .) vanishes on the torus")
    w = 1.0 / np.abs(c)
    return TorusDensity(grid, w / grid.integrate(w))


def stationary_density(
    model: ModelSpec,
    scale: ScaleParams,
    theta: float,
    x: float,
    grid: TorusGrid,
    order: int = DEFAULT_ORDER,
) -> TorusDensity:
    return invariant_density(model, scale.regime, theta, x, grid, scale.gamma, order)


# ---------------------------------------------------------------------------
# Cell and Poisson problems

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _cellwise_antiderivative(f, grid: TorusGrid) -> np.ndarray:
    """F(y_j) = int_0^{y_j} f with Gauss-Legendre on every grid cell."""
    h = grid.spacing
    left = grid.nodes[:, None]
    pts = left + 0.5 * h * (_GL_NODES[None, :] + 1.0)
    pieces = 0.5 * h * (f(pts) @ _GL_WEIGHTS)
    return np.concatenate(([0.0], np.cumsum(pieces[:-1])))


def check_centering(model: ModelSpec, theta: float, x: float, grid: TorusGrid, tol: float = CENTERING_TOL) -> TorusDensity:
    mu = invariant_density(model, Regime.REGIME1, theta, x, grid)
    centering = mu.expect(model.b(theta, x, grid.nodes))
    if abs(centering) > tol:
        raise CenteringError("centering violated: fast drift has nonzero mean", centering)
    return mu


def solve_cell_problem(
    model: ModelSpec,
    theta: float,
    x: float,
    grid: TorusGrid,
    method: str = "auto",
    order: int = DEFAULT_ORDER,
    tol: float = CENTERING_TOL,
) -> CellSolution:
    """Solve L1 chi = -b with int chi dmu = 0.

    ``method='analytic'`` uses dchi/dy = -1 + lambda exp(Q/D) / Zhat, valid for
    gradient fast drift with constant sigma; ``'fd'`` solves the discrete
    system; ``'auto'`` picks the analytic route when it applies.
    """
    mu = check_centering(model, theta, x, grid, tol)
    y = grid.nodes
    if method == "auto":
        method = "analytic" if has_gibbs_form(model) else "fd"
    if method == "analytic":
        if not has_gibbs_form(model):
            raise ValueError("analytic cell solution needs a gradient fast drift and constant sigma")
        D = model.diffusion_constant()
        Q = model.potential
        _potential_values(Q, D, grid)
        _, Zhat = partition_constants(Q, D, grid)
        lam = grid.period

        def slope(s):
            return -1.0 + lam * np.exp(np.asarray(Q(s), float) / D) / Zhat

        dchi = np.broadcast_to(slope(y), y.shape).astype(float)
        chi = _cellwise_antiderivative(slope, grid)
    elif method == "fd":
        s = model.sig(x, y)
        b = model.b(theta, x, y)
        L = generator_matrix(grid, b, s * s, order)
        chi = _solve_with_row(L, -b, mu.values * grid.spacing, 0.0)
        dchi = derivative(grid, chi, order)
    else:
        raise ValueError(f"unknown cell-problem method {method!r}")
    chi = chi - mu.expect(chi)
    return CellSolution(grid, chi, dchi, mu, method)


def solve_poisson_phi(
    model: ModelSpec,
    theta: float,
    theta0: float,
    x: float,
    grid: TorusGrid,
    order: int = DEFAULT_ORDER,
    tol: float = CENTERING_TOL,
) -> PoissonSolution:
    """Solve L1 Phi = -<b_theta0, c_theta>_alpha with int Phi dmu = 0."""
    y = grid.nodes
    mu = invariant_density(model, Regime.REGIME1, theta0, x, grid)
    s = model.sig(x, y)
    b0 = model.b(theta0, x, y)
    source = b0 * model.c(theta, x, y) / (s * s)
    centering = mu.expect(source)
    if abs(centering) > tol:
        raise CenteringError("cross-drift centering violated: <b_theta0, c_theta> has nonzero mean", centering)
    if not np.any(source):
        zero = np.zeros(grid.n_points)
        return PoissonSolution(grid, zero, zero.copy(), mu, 0.0)
    L = generator_matrix(grid, b0, s * s, order)
    phi = _solve_with_row(L, -source, mu.values * grid.spacing, 0.0)
    phi = phi - mu.expect(phi)
    residual = float(np.max(np.abs(L @ phi + source)))
    return PoissonSolution(grid, phi, derivative(grid, phi, order), mu, residual)


@functools.lru_cache(maxsize=64)
def homogenized_weights(model: ModelSpec, grid: TorusGrid) -> np.ndarray:
    """Grid weights w with averaged Regime 1 drift = sum(w * c) for Gibbs-form models.

    For a gradient fast drift with constant sigma both the density and the
    cell-solution slope are free of (theta, x), so ``(1 + dchi/dy) m`` is
    computed once per (model, grid).
    """
    if not has_gibbs_form(model):
        raise ValueError("homogenized weights need a gradient fast drift and constant sigma")
    cell = solve_cell_problem(model, model.theta_mid, 0.0, grid, method="analytic")
    w = (1.0 + cell.dchi_dy) * cell.density.values * grid.spacing
    w.setflags(write=False)
    return w


def write_grid_csv(path, grid: TorusGrid, values) -> None:
    """Dump a grid function as CSV with columns y,value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "value"])
        for yj, vj in zip(grid.nodes, np.asarray(values, float)):
            w.writerow([repr(float(yj)), repr(float(vj))])
