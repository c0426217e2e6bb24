import numpy as np
import pytest

from src.calculations.probes import (
    Probe,
    bump,
    check_probe,
    clipped_distance,
    default_probe_bank,
    hat,
    probe_by_name,
    smooth_step,
)
from src.core.errors import ProbeError
from src.core.measures import GridSpec


def test_default_bank(line_grid):
    bank = default_probe_bank(line_grid)
    assert len(bank) == 8
    assert bank[0].name == "x1"
    assert len({p.name for p in bank}) == 8
    assert all(p.lipschitz <= 1.0 for p in bank)


def test_bank_in_the_plane():
    grid = GridSpec((-2.0, -2.0), (2.0, 2.0), (16, 16))
    names = [p.name for p in default_probe_bank(grid, count=6)]
    assert names[:2] == ["x1", "x2"]
    assert len(names) == 6


def test_probe_shapes():
    points = np.array([[0.0], [0.5], [2.0]])
    np.testing.assert_allclose(hat(0.0, 1.0)(points), [1.0, 0.5, 0.0])
    np.testing.assert_allclose(clipped_distance(0.0, 1.0)(points), [0.0, 0.5, 1.0])
    assert bump(0.0, 1.0)(points)[0] == pytest.approx(2.0 / np.pi)
    assert bump(0.0, 1.0)(points)[2] == 0.0
    assert smooth_step(0.0)(points)[1] == pytest.approx(np.tanh(0.5))


def test_check_rejects_steep_probe(line_grid):
    with pytest.raises(ProbeError):
        check_probe(Probe("steep", lambda x: 3.0 * x[:, 0], 1.0), line_grid)


def test_check_measures_slope(line_grid):
    assert check_probe(hat(0.0, 1.0), line_grid) == pytest.approx(1.0, rel=1e-6)


def test_lookup(line_grid):
    assert probe_by_name("one", line_grid)(np.zeros((3, 1))).tolist() == [1.0, 1.0, 1.0]
    assert probe_by_name("x1", line_grid).name == "x1"
    bank = default_probe_bank(line_grid)
    assert probe_by_name(bank[3].name, line_grid, bank) is bank[3]
    with pytest.raises(ProbeError):
        probe_by_name("x2", line_grid)
    with pytest.raises(ProbeError):
        probe_by_name("nope", line_grid)
