"""
Metric backbone: d1, d2 (1D), H^-1 seminorm and first moments

1D distances are computed exactly from CDFs/quantile functions: step functions for
atoms, piecewise linear within cells for grid densities. d1 in higher dimension uses the
exact network-simplex solver from POT and refuses problems above the atom cap instead
of approximating.
"""

from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np
import ot
import structlog
from scipy import fft

from src.config import get_settings
from src.core.errors import DimensionError, MassMismatchError, NormalizationError, SizeError
from src.core.measures import MASS_TOL, GridDensity, Measure, ParticleMeasure, integrate

logger = structlog.get_logger(__name__)


@dataclass
class MetricReport:
    """Distances between two measures plus the d2 <= 2 * H^-1 check"""

    d1: float
    d2: Optional[float]
    hminus1: Optional[float]
    first_moments: tuple[float, float]
    embedding_holds: Optional[bool] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _check_unit_mass(measure: Measure) -> None:
    if isinstance(measure, GridDensity) and abs(measure.mass - 1.0) > MASS_TOL:
        raise NormalizationError(f"Grid measure has mass {measure.mass:.12g}; renormalize before comparing")


def _check_1d(mu: Measure, nu: Measure) -> None:
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionError(f"1D distance requested for dims {mu.dim} and {nu.dim}")
    _check_unit_mass(mu)
    _check_unit_mass(nu)


# ---------------------------------------------------------------------------
# CDF pieces
# ---------------------------------------------------------------------------

def _breakpoints(measure: Measure) -> np.ndarray:
    if isinstance(measure, ParticleMeasure):
        return measure.positions[:, 0]
    return measure.grid.axis_edges(0)


def _cdf_limits(measure: Measure, left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CDF values at the ends of intervals containing no interior breakpoint"""
    if isinstance(measure, ParticleMeasure):
        order = np.argsort(measure.positions[:, 0], kind="stable")
        x = measure.positions[order, 0]
        cum = np.concatenate([[0.0], np.cumsum(measure.weights[order])])
        value = cum[np.searchsorted(x, left, side="right")]
        return value, value
    edges = measure.grid.axis_edges(0)
    cum = np.concatenate([[0.0], np.cumsum(measure.masses)])
    return np.interp(left, edges, cum), np.interp(right, edges, cum)


def _abs_linear_integral(h0: np.ndarray, h1: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Exact integral of |h| for h linear on each interval"""
    same_sign = h0 * h1 >= 0
    denom = np.abs(h0) + np.abs(h1)
    crossing = np.divide(h0**2 + h1**2, 2.0 * denom, out=np.zeros_like(denom), where=denom > 0)
    return width * np.where(same_sign, 0.5 * (np.abs(h0) + np.abs(h1)), crossing)


def d1_1d(mu: Measure, nu: Measure) -> float:
    """
    Exact 1D Wasserstein-1 distance, integral of |F_mu - F_nu|

    Args:
        mu, nu: 1D particle or grid measures of unit mass

    Returns:
        d1(mu, nu)
    """
    _check_1d(mu, nu)
    points = np.unique(np.concatenate([_breakpoints(mu), _breakpoints(nu)]))
    if points.size < 2:
        return 0.0
    left, right = points[:-1], points[1:]
    f0, f1 = _cdf_limits(mu, left, right)
    g0, g1 = _cdf_limits(nu, left, right)
    return float(np.sum(_abs_linear_integral(f0 - g0, f1 - g1, right - left)))


# ---------------------------------------------------------------------------
# Quantile pieces
# ---------------------------------------------------------------------------

def _quantile_limits(measure: Measure, u0: np.ndarray, u1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quantile function at the ends of level intervals containing no interior level"""
    mid = 0.5 * (u0 + u1)
    if isinstance(measure, ParticleMeasure):
        order = np.argsort(measure.positions[:, 0], kind="stable")
        x = measure.positions[order, 0]
        cum = np.cumsum(measure.weights[order])
        k = np.minimum(np.searchsorted(cum, mid, side="left"), x.size - 1)
        return x[k], x[k]
    masses = measure.masses
    edges = measure.grid.axis_edges(0)
    cum = np.concatenate([[0.0], np.cumsum(masses)])
    j = np.clip(np.searchsorted(cum, mid, side="right") - 1, 0, masses.size - 1)
    h = measure.grid.spacing[0]
    m = np.where(masses[j] > 0, masses[j], 1.0)
    return edges[j] + (u0 - cum[j]) / m * h, edges[j] + (u1 - cum[j]) / m * h


def _level_breaks(measure: Measure) -> np.ndarray:
    if isinstance(measure, ParticleMeasure):
        order = np.argsort(measure.positions[:, 0], kind="stable")
        return np.cumsum(measure.weights[order])
    return np.cumsum(measure.masses)


def d2_1d(mu: Measure, nu: Measure) -> float:
    """1D Wasserstein-2 distance by exact quadrature of the quantile difference"""
    _check_1d(mu, nu)
    levels = np.unique(np.clip(np.concatenate([[0.0, 1.0], _level_breaks(mu), _level_breaks(nu)]), 0.0, 1.0))
    u0, u1 = levels[:-1], levels[1:]
    keep = u1 - u0 > 0
    u0, u1 = u0[keep], u1[keep]
    a0, a1 = _quantile_limits(mu, u0, u1)
    b0, b1 = _quantile_limits(nu, u0, u1)
    h0, h1 = a0 - b0, a1 - b1
    total = np.sum((u1 - u0) * (h0**2 + h0 * h1 + h1**2) / 3.0)
    return float(np.sqrt(max(total, 0.0)))


# ---------------------------------------------------------------------------
# Exact OT for atoms
# ---------------------------------------------------------------------------

def d1_particles(mu: ParticleMeasure, nu: ParticleMeasure, cap: Optional[int] = None) -> float:
    """
    Exact discrete optimal transport with Euclidean cost (network simplex)

    Raises:
        SizeError: when either side has more atoms than the configured cap
    """
    if mu.dim != nu.dim:
        raise DimensionError(f"Dimension mismatch: {mu.dim} vs {nu.dim}")
    cap = cap or get_settings().d1_atom_cap
    if mu.size > cap or nu.size > cap:
        raise SizeError(f"d1_particles limited to {cap} atoms per side, got {mu.size} and {nu.size}")
    cost = ot.dist(mu.positions, nu.positions, metric="euclidean")
    value = ot.emd2(mu.weights, nu.weights, cost, numItermax=1_000_000)
    return float(max(value, 0.0))


def d1(mu: Measure, nu: Measure) -> float:
    """Dispatch to the exact 1D formula or to network simplex on atoms"""
    if mu.dim != nu.dim:
        raise DimensionError(f"Dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.dim == 1:
        return d1_1d(mu, nu)
    left = mu if isinstance(mu, ParticleMeasure) else mu.to_particles()
    right = nu if isinstance(nu, ParticleMeasure) else nu.to_particles()
    return d1_particles(left, right)


def probe_distance(mu: Measure, nu: Measure, probes: Sequence[Callable[[np.ndarray], np.ndarray]]) -> float:
    """Largest |int psi d(mu - nu)| over Lipschitz-1 probes, a lower bound on d1"""
    if mu.dim != nu.dim:
        raise DimensionError(f"Dimension mismatch: {mu.dim} vs {nu.dim}")
    return float(max(abs(integrate(mu, probe) - integrate(nu, probe)) for probe in probes))


# ---------------------------------------------------------------------------
# H^-1 and moments
# ---------------------------------------------------------------------------

def _dirichlet_eigenvalues(grid) -> np.ndarray:
    """Eigenvalues of the cell-centered 5-point -Laplacian with zero Dirichlet walls"""
    total = np.zeros(grid.shape)
    for axis in range(grid.dim):
        n = grid.cells[axis]
        h = grid.spacing[axis]
        k = np.arange(1, n + 1)
        lam = (2.0 / h * np.sin(np.pi * k / (2.0 * n))) ** 2
        shape = [1] * grid.dim
        shape[axis] = n
        total = total + lam.reshape(shape)
    return total


def hminus1_seminorm(mu: GridDensity, nu: GridDensity) -> float:
    """
    ||mu - nu||_{H^-1} as ||grad u||_{L2} with -Laplace u = mu - nu, u = 0 on the box walls

    The Dirichlet problem is diagonalised by the type-2 discrete sine transform, so
    ||grad u||^2 = sum(u * f) * cellvol exactly for the 5-point operator.
    """
    if mu.grid != nu.grid:
        raise DimensionError("H^-1 seminorm needs both densities on the same grid")
    grid = mu.grid
    f = mu.values - nu.values
    mass_gap = float(f.sum() * grid.cell_volume)
    if abs(mass_gap) > 1e-8:
        raise MassMismatchError(f"Densities differ in mass by {mass_gap:.3e}")
    if not np.any(f):
        return 0.0
    coeffs = fft.dstn(f, type=2) / _dirichlet_eigenvalues(grid)
    u = fft.idstn(coeffs, type=2)
    energy = float(np.sum(u * f) * grid.cell_volume)
    return float(np.sqrt(max(energy, 0.0)))


def _abs_antiderivative(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * np.abs(x)


def first_moment(mu: Measure) -> float:
    """int |x| dmu; exact for 1D grids (piecewise constant density), midpoint in 2D"""
    _check_unit_mass(mu)
    if isinstance(mu, ParticleMeasure):
        return float(mu.weights @ np.linalg.norm(mu.positions, axis=1))
    if mu.dim == 1:
        edges = mu.grid.axis_edges(0)
        per_cell = _abs_antiderivative(edges[1:]) - _abs_antiderivative(edges[:-1])
        return float(np.sum(mu.values * per_cell))
    radius = np.linalg.norm(mu.grid.centers(), axis=-1)
    return float(np.sum(radius * mu.masses))


def metric_report(mu: Measure, nu: Measure) -> MetricReport:
    """All distances available for the pair, with the d2 <= 2 * H^-1 embedding flag"""
    distance = d1(mu, nu)
    d2 = d2_1d(mu, nu) if mu.dim == 1 else None
    hm1 = None
    if isinstance(mu, GridDensity) and isinstance(nu, GridDensity) and mu.grid == nu.grid:
        hm1 = hminus1_seminorm(mu, nu)
    holds = None
    if d2 is not None and hm1 is not None:
        holds = bool(d2 <= 2.0 * hm1 * 1.05 + 1e-12)
        if not holds:
            logger.warning("H^-1 embedding violated", d2=d2, hminus1=hm1)
    return MetricReport(
        d1=distance,
        d2=d2,
        hminus1=hm1,
        first_moments=(first_moment(mu), first_moment(nu)),
        embedding_holds=holds,
    )
