import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from src.calculations.metrics import (
    d1,
    d1_1d,
    d1_particles,
    d2_1d,
    first_moment,
    hminus1_seminorm,
    metric_report,
    probe_distance,
)
from src.calculations.probes import coordinate, hat
from src.core.errors import DimensionError, MassMismatchError, NormalizationError, SizeError
from src.core.measures import GridDensity, GridSpec, ParticleMeasure


def gaussian(grid: GridSpec, center: float, sigma: float) -> GridDensity:
    masses = np.diff(stats.norm.cdf(grid.axis_edges(0), loc=center, scale=sigma))
    return GridDensity.from_masses(grid, masses / masses.sum())


class TestOneDimensional:
    def test_diracs(self):
        assert d1_1d(ParticleMeasure.dirac(0.0), ParticleMeasure.dirac(1.0)) == pytest.approx(1.0)

    def test_dirac_against_uniform(self):
        uniform = GridDensity.uniform(GridSpec.interval(-1.0, 1.0, 16))
        delta = ParticleMeasure.dirac(0.0)
        assert d1_1d(delta, uniform) == pytest.approx(0.5, abs=1e-12)
        assert d2_1d(delta, uniform) == pytest.approx(1.0 / np.sqrt(3.0), abs=1e-12)

    def test_split_mass(self):
        split = ParticleMeasure.from_atoms([(0.5, -1.0), (0.5, 1.0)])
        assert d1(split, ParticleMeasure.dirac(0.0)) == pytest.approx(1.0)
        assert d2_1d(split, ParticleMeasure.dirac(0.0)) == pytest.approx(1.0)

    def test_translation(self):
        measure = ParticleMeasure.uniform_segment(-1.0, 2.0, 25)
        assert d1(measure, measure.translate(0.3)) == pytest.approx(0.3)
        assert d2_1d(measure, measure.translate(-0.3)) == pytest.approx(0.3)

    def test_grid_translation_by_whole_cells(self):
        grid = GridSpec.interval(-4.0, 4.0, 160)
        first = gaussian(grid, -0.5, 0.4)
        shifted = GridDensity.from_masses(grid, np.roll(first.masses, 10))
        assert d1_1d(first, shifted) == pytest.approx(0.5, rel=1e-9)

    def test_exact_formula_matches_network_simplex(self):
        rng = np.random.default_rng(7)
        mu = ParticleMeasure.normalized(rng.random(30), rng.normal(size=30))
        nu = ParticleMeasure.normalized(rng.random(40), rng.normal(1.0, 2.0, size=40))
        assert d1_1d(mu, nu) == pytest.approx(d1_particles(mu, nu), rel=1e-9)

    def test_leaked_mass_is_rejected(self):
        grid = GridSpec.interval(0.0, 1.0, 4)
        leaked = GridDensity(grid, np.full(4, 0.5), outflux=0.5)
        with pytest.raises(NormalizationError):
            d1_1d(leaked, ParticleMeasure.dirac(0.5))


class TestParticles:
    def test_plane_atoms(self):
        assert d1(ParticleMeasure.dirac([0.0, 0.0]), ParticleMeasure.dirac([3.0, 4.0])) == pytest.approx(5.0)

    def test_atom_cap(self):
        atoms = ParticleMeasure.uniform_segment(0.0, 1.0, 3)
        with pytest.raises(SizeError):
            d1_particles(atoms, atoms, cap=2)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            d1(ParticleMeasure.dirac(0.0), ParticleMeasure.dirac([0.0, 0.0]))


class TestMoments:
    def test_first_moment_of_atoms(self):
        assert first_moment(ParticleMeasure.dirac(-2.0)) == pytest.approx(2.0)
        assert first_moment(ParticleMeasure.dirac([3.0, 4.0])) == pytest.approx(5.0)

    def test_first_moment_of_uniform(self):
        uniform = GridDensity.uniform(GridSpec.interval(-1.0, 1.0, 7))
        assert first_moment(uniform) == pytest.approx(0.5)


class TestHminus1:
    def test_zero_for_equal_densities(self, line_grid):
        density = gaussian(line_grid, 0.0, 0.5)
        assert hminus1_seminorm(density, density) == 0.0

    def test_mass_mismatch(self):
        grid = GridSpec.interval(0.0, 1.0, 4)
        full = GridDensity.uniform(grid)
        leaked = GridDensity(grid, np.full(4, 0.9), outflux=0.1)
        with pytest.raises(MassMismatchError):
            hminus1_seminorm(full, leaked)

    def test_needs_same_grid(self):
        a = GridDensity.uniform(GridSpec.interval(0.0, 1.0, 4))
        b = GridDensity.uniform(GridSpec.interval(0.0, 1.0, 8))
        with pytest.raises(DimensionError):
            hminus1_seminorm(a, b)

    def test_fourier_mode_on_a_periodic_box(self):
        # -u'' = eps cos x with u = 0 at 0 and 2 pi gives u = eps (cos x - 1), so ||u'|| = eps sqrt(pi)
        grid = GridSpec.interval(0.0, 2.0 * np.pi, 512)
        edges = grid.axis_edges(0)
        cos_average = np.diff(np.sin(edges)) / grid.spacing[0]
        for eps in (0.05, 0.2):
            mu = GridDensity(grid, 1.0 / (2.0 * np.pi) + 0.5 * eps * cos_average)
            nu = GridDensity(grid, 1.0 / (2.0 * np.pi) - 0.5 * eps * cos_average)
            assert hminus1_seminorm(mu, nu) == pytest.approx(eps * np.sqrt(np.pi), rel=1e-3)

    def test_matches_cdf_formula_in_1d(self):
        # in 1D the Dirichlet H^-1 norm is the L2 norm of (F_mu - F_nu) minus its mean
        grid = GridSpec.interval(-4.0, 4.0, 400)
        mu, nu = gaussian(grid, -0.1, 0.4), gaussian(grid, 0.2, 0.5)
        edges = grid.axis_edges(0)
        gap = np.concatenate([[0.0], np.cumsum(mu.masses - nu.masses)])
        centered = gap - trapezoid(gap, edges) / 8.0
        expected = np.sqrt(trapezoid(centered**2, edges))
        assert hminus1_seminorm(mu, nu) == pytest.approx(expected, rel=1e-2)


def test_metric_report_embedding():
    grid = GridSpec.interval(-4.0, 4.0, 256)
    report = metric_report(gaussian(grid, 0.0, 0.3), gaussian(grid, 0.2, 0.3))
    assert report.d1 == pytest.approx(0.2, rel=1e-3)
    assert report.d2 == pytest.approx(0.2, rel=1e-2)
    assert report.hminus1 > 0
    assert report.embedding_holds is True
    assert set(report.to_dict()) == {"d1", "d2", "hminus1", "first_moments", "embedding_holds"}


def test_metric_report_particles_skip_grid_norms(symmetric_pair):
    report = metric_report(symmetric_pair, ParticleMeasure.dirac(0.0))
    assert report.hminus1 is None
    assert report.embedding_holds is None
    assert report.first_moments == (pytest.approx(1.0), pytest.approx(0.0))


def test_probe_distance_is_a_lower_bound(symmetric_pair):
    delta = ParticleMeasure.dirac(0.0)
    probes = [coordinate(0), hat(0.0, 1.0)]
    lower = probe_distance(symmetric_pair, delta, probes)
    assert lower == pytest.approx(1.0)
    assert lower <= d1(symmetric_pair, delta) + 1e-12


class TestMetricProperties:
    @pytest.mark.parametrize("seed", range(5))
    def test_symmetry_and_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (ParticleMeasure.normalized(rng.random(n), rng.normal(size=(n, 2))) for n in (7, 12, 20))
        assert d1_particles(a, b) == pytest.approx(d1_particles(b, a), abs=1e-9)
        assert d1_particles(a, c) <= d1_particles(a, b) + d1_particles(b, c) + 1e-9

    @pytest.mark.parametrize("size", [1, 2, 3, 10, 57, 128, 200])
    def test_network_simplex_equals_cdf_formula(self, size):
        rng = np.random.default_rng(size)
        mu = ParticleMeasure.normalized(rng.random(size), rng.normal(size=size))
        nu = ParticleMeasure.normalized(rng.random(200 - size + 1), rng.uniform(-2.0, 3.0, size=200 - size + 1))
        assert d1_particles(mu, nu) == pytest.approx(d1_1d(mu, nu), abs=1e-9)

    @pytest.mark.parametrize("measure", [
        ParticleMeasure.from_atoms([(0.25, -2.0), (0.25, 0.5), (0.5, 3.0)]),
        ParticleMeasure.uniform_segment(-1.0, 2.0, 31),
        GridDensity.uniform(GridSpec.interval(-1.0, 1.0, 7)),
        GridDensity.uniform(GridSpec.interval(0.3, 2.5, 11)),
    ])
    def test_first_moment_is_distance_to_origin(self, measure):
        assert first_moment(measure) == pytest.approx(d1_1d(measure, ParticleMeasure.dirac(0.0)), abs=1e-9)

    def test_first_moment_of_a_gaussian_grid_density(self, line_grid):
        density = gaussian(line_grid, 0.7, 0.5)
        assert first_moment(density) == pytest.approx(d1_1d(density, ParticleMeasure.dirac(0.0)), abs=1e-9)
