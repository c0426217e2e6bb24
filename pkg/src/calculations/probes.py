"""
Lipschitz probe functions

Probes serve as initial data psi0 of dual solves and as test functions of the
grid-restricted d1 lower bound. Every probe in the default bank has Lipschitz
constant <= 1.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.calculations.grid_ops import lipschitz_constant
from src.core.errors import ProbeError
from src.core.measures import GridSpec


@dataclass(frozen=True)
class Probe:
    """A named test function on points (n, dim) with its declared Lipschitz constant"""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(points)), dtype=float).reshape(-1)


def _distance(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points - center, axis=-1)


def coordinate(axis: int = 0) -> Probe:
    return Probe(f"x{axis + 1}", lambda x: x[:, axis], 1.0)


def constant_probe(value: float = 1.0) -> Probe:
    return Probe(f"const({value:g})", lambda x: np.full(x.shape[0], value), 0.0)


def clipped_distance(center, radius: float) -> Probe:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    return Probe(f"clip|x-{_label(center)}|<={radius:g}",
                 lambda x: np.minimum(_distance(x, center), radius), 1.0)


def hat(center, radius: float) -> Probe:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    return Probe(f"hat({_label(center)},{radius:g})",
                 lambda x: np.maximum(radius - _distance(x, center), 0.0), 1.0)


def bump(center, radius: float) -> Probe:
    """(r/pi)(1 + cos(pi |x-a| / r)) inside the ball, a C1 bump with slope <= 1"""
    center = np.atleast_1d(np.asarray(center, dtype=float))

    def func(x: np.ndarray) -> np.ndarray:
        r = _distance(x, center)
        return np.where(r < radius, radius / np.pi * (1.0 + np.cos(np.pi * np.minimum(r, radius) / radius)), 0.0)

    return Probe(f"bump({_label(center)},{radius:g})", func, 1.0)


def smooth_step(center, axis: int = 0) -> Probe:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    return Probe(f"tanh(x{axis + 1}-{center[axis]:g})", lambda x: np.tanh(x[:, axis] - center[axis]), 1.0)


def _label(center: np.ndarray) -> str:
    return ",".join(f"{c:g}" for c in center)


def check_probe(probe: Probe, grid: GridSpec, refine: int = 4, slack: float = 1e-6) -> float:
    """
    Measure the probe's Lipschitz constant on a refined copy of the grid

    Returns:
        the measured constant

    Raises:
        ProbeError: non-finite values or a measured constant above the declared one
    """
    fine = grid.refined(refine)
    values = probe(fine.centers().reshape(-1, grid.dim)).reshape(fine.shape)
    if not np.all(np.isfinite(values)):
        raise ProbeError(f"Probe '{probe.name}' is not finite on the box")
    measured = lipschitz_constant(values, fine)
    if measured > probe.lipschitz * (1.0 + slack) + slack:
        raise ProbeError(f"Probe '{probe.name}' has slope {measured:.4g} above its declared {probe.lipschitz:g}")
    return measured


def default_probe_bank(grid: GridSpec, count: int = 8) -> list[Probe]:
    """
    Deterministic bank: coordinates, then clipped distances, hats, bumps and tanh steps
    centred on a uniform sweep of the inner half of the box

    Args:
        grid: box the probes are checked on
        count: number of probes returned
    """
    lower = np.array(grid.lower)
    upper = np.array(grid.upper)
    middle = 0.5 * (lower + upper)
    width = float(np.min(upper - lower))
    probes = [coordinate(axis) for axis in range(grid.dim)]
    builders = (clipped_distance, hat, bump)
    sweep = max(count, 2)
    k = 0
    while len(probes) < count:
        fraction = (k % sweep + 0.5) / sweep - 0.5
        center = middle + 0.5 * fraction * (upper - lower)
        kind = k % 4
        if kind == 3:
            probes.append(smooth_step(center, axis=k % grid.dim))
        else:
            radius = width * (0.125 + 0.0625 * (k % 3))
            probes.append(builders[kind](center, radius))
        k += 1
    bank = probes[:count]
    for probe in bank:
        check_probe(probe, grid)
    return bank


def probe_by_name(name: str, grid: GridSpec, bank: Optional[list[Probe]] = None) -> Probe:
    """Look a probe up in the bank; 'one' and 'x1'/'x2' are always available"""
    if name == "one":
        return constant_probe(1.0)
    if name in ("x1", "x2") and int(name[1]) <= grid.dim:
        return coordinate(int(name[1]) - 1)
    for probe in bank or default_probe_bank(grid):
        if probe.name == name:
            return probe
    raise ProbeError(f"Unknown probe '{name}'")
