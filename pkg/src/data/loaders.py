"""
Data Loaders - import/export for dualflow runs

Formats:
- particle measures: CSV with header `weight,x1[,x2]`
- grid densities: CSV whose first line is `# {"lower": [...], "upper": [...], "cells": [...]}`
  followed by `x1[,x2],value` rows in cell order
- trajectories: one measure CSV per species and output time plus `times.csv`
- dual solutions: `psi_s{k:04d}.csv` snapshots and the audit history
- certificates: records CSV, JSON summary and a plain-text report
"""

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog

from src.calculations.dual_solver import DualSolution
from src.calculations.fixed_point import EntropyPairCertificate
from src.calculations.primal_solver import Trajectory
from src.core.errors import ConfigError, NormalizationError
from src.core.measures import GridDensity, GridSpec, Measure, ParticleMeasure

logger = structlog.get_logger(__name__)

HEADER_PREFIX = "#"
# hand-written particle files are accepted when their weights are this close to 1
LOAD_WEIGHT_TOL = 1e-6

PathLike = Union[str, Path]


@dataclass
class LoadedData:
    """Result of loading a measure file"""
    measure: Measure
    metadata: Dict[str, Any] = field(default_factory=dict)
    format: str = "particle"
    path: Optional[str] = None


class MeasureLoader:
    """
    Reads particle and grid measure CSVs

    The format is detected from the first line: a `#` header means a grid density.
    """

    def load(self, filepath: PathLike) -> LoadedData:
        path = Path(filepath)
        if not path.exists():
            raise ConfigError(f"Measure file not found: {path}")
        text = path.read_text()
        loaded = self.loads(text)
        loaded.path = str(path)
        logger.info("Measure loaded", path=str(path), format=loaded.format, dim=loaded.measure.dim)
        return loaded

    def loads(self, text: str) -> LoadedData:
        first = text.lstrip().split("\n", 1)[0]
        if first.startswith(HEADER_PREFIX):
            return self._load_grid(text)
        return self._load_particles(text)

    def _load_particles(self, text: str) -> LoadedData:
        df = pd.read_csv(io.StringIO(text))
        columns = [c.strip() for c in df.columns]
        df.columns = columns
        if "weight" not in columns:
            raise ConfigError(f"Particle CSV needs a 'weight' column, got {columns}")
        axes = [c for c in ("x1", "x2") if c in columns]
        if not axes:
            raise ConfigError("Particle CSV needs an 'x1' column")
        weights = df["weight"].to_numpy(dtype=float)
        total = weights.sum()
        if abs(total - 1.0) > LOAD_WEIGHT_TOL:
            raise NormalizationError(f"Particle weights sum to {total:.12g}, expected 1")
        measure = ParticleMeasure.normalized(weights, df[axes].to_numpy(dtype=float))
        return LoadedData(
            measure=measure,
            metadata={"atoms": measure.size, "dim": measure.dim, "weight_sum": float(total)},
            format="particle",
        )

    def _load_grid(self, text: str) -> LoadedData:
        header, body = text.lstrip().split("\n", 1)
        try:
            meta = json.loads(header[len(HEADER_PREFIX):].strip())
            grid = GridSpec(tuple(meta["lower"]), tuple(meta["upper"]), tuple(meta["cells"]))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigError(f"Bad grid header: {e}")
        df = pd.read_csv(io.StringIO(body))
        df.columns = [c.strip() for c in df.columns]
        if "value" not in df.columns:
            raise ConfigError("Grid CSV needs a 'value' column")
        if len(df) != int(np.prod(grid.shape)):
            raise ConfigError(f"Grid CSV has {len(df)} rows for {grid.shape} cells")
        values = df["value"].to_numpy(dtype=float).reshape(grid.shape)
        measure = GridDensity(grid, values, float(meta.get("outflux", 0.0)))
        return LoadedData(
            measure=measure,
            metadata={"grid": grid.to_dict(), "mass": measure.mass, "outflux": measure.outflux},
            format="grid",
        )


def measure_frame(measure: Measure) -> pd.DataFrame:
    """Tabular form of a measure: weight,x1[,x2] or x1[,x2],value"""
    if isinstance(measure, ParticleMeasure):
        data = {"weight": measure.weights}
        for a in range(measure.dim):
            data[f"x{a + 1}"] = measure.positions[:, a]
        return pd.DataFrame(data)
    centers = measure.grid.centers().reshape(-1, measure.dim)
    data = {f"x{a + 1}": centers[:, a] for a in range(measure.dim)}
    data["value"] = measure.values.reshape(-1)
    return pd.DataFrame(data)


def measure_to_csv(measure: Measure) -> str:
    body = measure_frame(measure).to_csv(index=False)
    if isinstance(measure, GridDensity):
        header = dict(measure.grid.to_dict(), outflux=measure.outflux)
        return f"{HEADER_PREFIX} {json.dumps(header)}\n{body}"
    return body


def load_measure(filepath: PathLike) -> Measure:
    return MeasureLoader().load(filepath).measure


def save_measure(measure: Measure, filepath: PathLike) -> str:
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(measure_to_csv(measure))
    return str(path)


class DataExporter:
    """
    Writes run artifacts to a directory
    """

    EXPORT_FORMATS = ['csv', 'json']

    def export_data(self, data: Any, format: str, filepath: PathLike) -> str:
        format = format.lower()
        if format == 'csv':
            return self._export_csv(data, filepath)
        elif format == 'json':
            return self._export_json(data, filepath)
        raise ConfigError(f"Unsupported export format: {format}")

    def _export_csv(self, data: Any, filepath: PathLike) -> str:
        if isinstance(data, pd.DataFrame):
            data.to_csv(filepath, index=False)
        elif isinstance(data, dict):
            pd.DataFrame([data]).to_csv(filepath, index=False)
        elif isinstance(data, (ParticleMeasure, GridDensity)):
            save_measure(data, filepath)
        else:
            raise ConfigError(f"Type {type(data).__name__} not supported for CSV export")
        return str(filepath)

    def _export_json(self, data: Any, filepath: PathLike) -> str:
        with open(filepath, 'w') as f:
            json.dump(data, f, indent=2, default=json_default)
        return str(filepath)

    def export_trajectory(self, trajectory: Trajectory, directory: PathLike) -> list[str]:
        """
        One CSV per species and output time plus times.csv

        Args:
            trajectory: solved trajectory
            directory: target directory (created)

        Returns:
            written paths
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for k, state in enumerate(trajectory.states):
            for i, measure in enumerate(state):
                written.append(save_measure(measure, directory / f"species{i}_t{k:04d}.csv"))
        times = pd.DataFrame({"k": range(len(trajectory.times)), "t": trajectory.times})
        written.append(self._export_csv(times, directory / "times.csv"))
        written.append(self._export_csv(trajectory.mass_ledger(), directory / "mass_ledger.csv"))
        logger.info("Trajectory exported", directory=str(directory), outputs=len(trajectory.times),
                    species=trajectory.n_species)
        return written

    def export_dual(self, solution: DualSolution, directory: PathLike, prefix: str = "psi") -> list[str]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for k, s in enumerate(solution.times):
            written.append(self._export_csv(solution.to_frame(s), directory / f"{prefix}_s{k:04d}.csv"))
        written.append(self._export_csv(pd.DataFrame({"k": range(len(solution.times)), "s": solution.times}),
                                        directory / f"{prefix}_times.csv"))
        written.append(self._export_csv(solution.history, directory / f"{prefix}_history.csv"))
        return written

    def export_certificate(self, certificate: EntropyPairCertificate, directory: PathLike) -> list[str]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = [
            self._export_csv(certificate.to_frame(), directory / "records.csv"),
            self._export_json(certificate.summary(), directory / "summary.json"),
        ]
        report = directory / "report.txt"
        report.write_text(certificate_report(certificate))
        written.append(str(report))
        logger.info("Certificate exported", directory=str(directory), passed=certificate.passed)
        return written


def load_trajectory(directory: PathLike, diffusion: Optional[Sequence[float]] = None,
                    max_step: float = 0.0) -> Trajectory:
    """
    Read back a trajectory written by DataExporter.export_trajectory

    Args:
        directory: snapshot directory holding times.csv
        diffusion: per-species D of the run (default zero)
        max_step: largest forward step of the run, used by certificate tolerances
    """
    directory = Path(directory)
    times_path = directory / "times.csv"
    if not times_path.exists():
        raise ConfigError(f"No times.csv in {directory}")
    times = pd.read_csv(times_path)["t"].to_list()
    loader = MeasureLoader()
    n_species = len(list(directory.glob("species*_t0000.csv")))
    if n_species == 0:
        raise ConfigError(f"No species snapshots in {directory}")
    states, formats = [], set()
    for k in range(len(times)):
        state = []
        for i in range(n_species):
            loaded = loader.load(directory / f"species{i}_t{k:04d}.csv")
            formats.add(loaded.format)
            state.append(loaded.measure)
        states.append(state)
    if len(formats) != 1:
        raise ConfigError(f"Mixed measure formats in {directory}: {sorted(formats)}")
    diffusion = tuple(diffusion) if diffusion is not None else (0.0,) * n_species
    return Trajectory(times=[float(t) for t in times], states=states, representation=formats.pop(),
                      diffusion=diffusion, max_step=max_step)


def certificate_report(certificate: EntropyPairCertificate) -> str:
    """Human-readable summary of a certificate"""
    verdict = "PASSED" if certificate.passed else "FAILED"
    lines = [
        f"Entropy pair certificate: {verdict}",
        f"metric: {certificate.metric}",
        f"horizons: {', '.join(f'{h:g}' for h in certificate.horizons)}",
        f"probes: {len(certificate.probes)}",
        f"max residual: {certificate.max_residual:.3e}",
        "",
        f"{'T':>8} {'probe':<28} {'sp':>3} {'residual':>11} {'tolerance':>11}  ok",
    ]
    for r in certificate.records:
        lines.append(f"{r['horizon']:>8g} {r['probe']:<28} {r['species']:>3} {r['residual']:>11.3e} "
                     f"{r['tolerance']:>11.3e}  {'yes' if r['passed'] else 'NO'}")
    if certificate.flags:
        lines.append("")
        lines.append("audit flags:")
        lines.extend(f"  {flag}" for flag in certificate.flags)
    return "\n".join(lines) + "\n"


def json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return str(value)
