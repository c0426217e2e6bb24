import json

import numpy as np
import pandas as pd
import pytest

from src.calculations.dual_solver import DualConfig, solve_dual
from src.calculations.fixed_point import certify_entropy_pair
from src.calculations.primal_solver import PrimalConfig, frozen_field_flow, heat_kernel_density
from src.calculations.probes import coordinate
from src.calculations.velocity import VelocityField
from src.core.errors import ConfigError, NormalizationError
from src.core.measures import GridDensity, GridSpec, ParticleMeasure
from src.data.loaders import (
    DataExporter,
    MeasureLoader,
    certificate_report,
    json_default,
    load_measure,
    load_trajectory,
    measure_to_csv,
    save_measure,
)

GRID = GridSpec.interval(-2.0, 2.0, 16)


def test_particle_csv(tmp_path):
    path = tmp_path / "atoms.csv"
    path.write_text("weight, x1\n0.25,-1.0\n0.75,2.0\n")
    loaded = MeasureLoader().load(path)
    assert loaded.format == "particle"
    assert loaded.metadata["atoms"] == 2
    np.testing.assert_allclose(loaded.measure.positions[:, 0], [-1.0, 2.0])


def test_hand_written_weights_are_renormalized():
    measure = MeasureLoader().loads("weight,x1,x2\n0.3333333,0,0\n0.3333333,1,0\n0.3333334,0,1\n").measure
    assert measure.dim == 2
    assert measure.weights.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("text, error", [
    ("weight,x1\n0.5,0.0\n", NormalizationError),
    ("w,x1\n1.0,0.0\n", ConfigError),
    ("weight,y\n1.0,0.0\n", ConfigError),
])
def test_bad_particle_csv(text, error):
    with pytest.raises(error):
        MeasureLoader().loads(text)


def test_grid_csv_keeps_outflux(tmp_path):
    density = GridDensity(GRID, np.full(16, 0.9 / 4.0), outflux=0.1)
    path = save_measure(density, tmp_path / "nested" / "rho.csv")
    loaded = MeasureLoader().load(path)
    assert loaded.format == "grid"
    assert loaded.measure.grid == GRID
    assert loaded.measure.outflux == pytest.approx(0.1)
    np.testing.assert_allclose(loaded.measure.values, density.values)


def test_grid_csv_errors():
    header = "# " + json.dumps(GRID.to_dict()) + "\n"
    with pytest.raises(ConfigError):
        MeasureLoader().loads("# {not json}\nx1,value\n0,1\n")
    with pytest.raises(ConfigError):
        MeasureLoader().loads(header + "x1,value\n0.0,0.25\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_measure(tmp_path / "absent.csv")


def test_measure_csv_header_only_for_grids(symmetric_pair):
    assert measure_to_csv(symmetric_pair).startswith("weight,x1")
    assert measure_to_csv(GridDensity.uniform(GRID)).startswith("# {")


class TestExporter:
    def test_unknown_format(self, tmp_path):
        with pytest.raises(ConfigError):
            DataExporter().export_data({}, "netcdf", tmp_path / "x.nc")

    def test_json_handles_numpy(self, tmp_path):
        path = DataExporter().export_data({"a": np.arange(3), "b": np.float64(0.5)}, "json", tmp_path / "a.json")
        assert json.loads(open(path).read()) == {"a": [0, 1, 2], "b": 0.5}

    def test_trajectory_directory(self, tmp_path):
        config = PrimalConfig(horizon=0.5, representation="grid", grid=GRID, outputs=(0.25,))
        trajectory = frozen_field_flow(config, VelocityField.constant(0.5), [heat_kernel_density(GRID, 0.1, 0.0, 0.0)])
        written = DataExporter().export_trajectory(trajectory, tmp_path / "snapshots")
        assert len(written) == 3 + 2
        loaded = load_trajectory(tmp_path / "snapshots", diffusion=[0.0], max_step=trajectory.max_step)
        assert loaded.times == trajectory.times
        assert loaded.representation == "grid"
        np.testing.assert_allclose(loaded.final[0].values, trajectory.final[0].values)

    def test_load_trajectory_needs_times(self, tmp_path):
        with pytest.raises(ConfigError):
            load_trajectory(tmp_path)

    def test_dual_directory(self, tmp_path):
        solution = solve_dual(DualConfig(horizon=0.5, grid=GRID, snapshot_times=(0.25,)),
                              VelocityField.constant(0.5), coordinate(0))
        written = DataExporter().export_dual(solution, tmp_path)
        assert len(written) == 3 + 2
        history = pd.read_csv(tmp_path / "psi_history.csv")
        assert history["s"].iloc[-1] == pytest.approx(0.5)

    def test_certificate_directory(self, tmp_path):
        config = PrimalConfig(horizon=0.5, representation="grid", grid=GRID)
        field = VelocityField.constant(0.5)
        trajectory = frozen_field_flow(config, field, [heat_kernel_density(GRID, 0.1, 0.0, 0.0)])
        certificate = certify_entropy_pair(trajectory, fields=field, probes=[coordinate(0)])
        DataExporter().export_certificate(certificate, tmp_path)
        assert json.loads((tmp_path / "summary.json").read_text())["probes"] == ["x1"]
        report = (tmp_path / "report.txt").read_text()
        assert report == certificate_report(certificate)
        assert report.splitlines()[0] == f"Entropy pair certificate: {'PASSED' if certificate.passed else 'FAILED'}"


def test_json_default():
    assert json_default(np.bool_(True)) is True
    assert json_default(np.array([1.5])) == [1.5]
    assert json_default(ParticleMeasure) == str(ParticleMeasure)
