import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazeid.density import (
    DensityError,
    InfeasibleTruncationError,
    build_grid,
    gamma_density,
    grid_from_range,
    log_normalizer,
    make_density,
)
from gazeid.gamma import GammaNatural, log_density as gamma_log_density, log_partition


def _flat_density(low=0.5, high=10.0, count=65, eta=(0.0, -1.0)):
    grid = grid_from_range(low, high, count)
    return make_density(GammaNatural(*eta), np.zeros(grid.nodes.size), grid)


def _draw(d, l, r, size, rng):
    return np.array([d.sample_truncated(l, r, rng) for _ in range(size)])


class TestGrid:
    def test_build_grid_bounds(self):
        obs = np.array([2.0, 9.0])
        grid = build_grid(obs, quadrature_count=128, extension_factor=1.5)
        nodes = grid.nodes
        assert nodes.min() <= 2.0 / 1.5 + 1e-12
        assert nodes.max() >= 9.0 * 1.5 - 1e-12
        assert np.all(np.diff(nodes) > 0)
        # observations are exact members of the node set
        assert 2.0 in nodes and 9.0 in nodes

    def test_low_floor(self):
        grid = build_grid(np.array([1e-9, 1.0]), quadrature_count=32)
        assert 0 < grid.grid_low <= 1e-9

    def test_rejects_nonpositive_observations(self):
        with pytest.raises(DensityError):
            build_grid(np.array([-1.0, 2.0]), quadrature_count=32)

    def test_rejects_empty(self):
        with pytest.raises(DensityError):
            build_grid(np.array([]), quadrature_count=32)


class TestNormalizer:
    def test_matches_dense_trapezoid_oracle(self):
        eta = GammaNatural(3.0, -0.8)
        grid = grid_from_range(1e-4, 40.0, 4001)
        g = 0.3 * np.sin(grid.nodes)
        le = eta.eta1 * np.log(grid.nodes) + eta.eta2 * grid.nodes + g
        oracle = np.trapezoid(np.exp(le), grid.nodes)
        assert log_normalizer(eta, g, grid) == pytest.approx(
            math.log(oracle), abs=1e-12
        )

    def test_zero_g_converges_to_gamma_partition(self):
        # with g == 0 the normalizer approaches the gamma partition
        # function as the grid refines
        eta = GammaNatural(2.0, -1.0)
        grid = grid_from_range(1e-6, 60.0, 200001)
        assert log_normalizer(eta, np.zeros(grid.nodes.size), grid) == pytest.approx(
            log_partition(eta.eta1, eta.eta2), abs=1e-6
        )


class TestLogPdf:
    def test_normalizes_to_one(self):
        d = _flat_density(eta=(1.5, -0.5))
        assert d.truncated_mass(0.0, math.inf) == pytest.approx(1.0, abs=1e-12)

    def test_matches_gamma_up_to_quadrature(self):
        eta = GammaNatural(2.5, -1.2)
        grid = grid_from_range(1e-6, 30.0, 100001)
        d = gamma_density(eta, grid)
        x = np.array([0.5, 1.0, 3.0, 7.5])
        assert np.allclose(d.log_pdf(x), gamma_log_density(eta, x), atol=1e-5)

    def test_nonpositive_arguments(self):
        d = _flat_density()
        assert d.log_pdf(0.0) == -math.inf
        assert d.log_pdf(-3.0) == -math.inf

    def test_constant_g_cancels(self):
        grid = grid_from_range(0.5, 10.0, 65)
        eta = GammaNatural(1.0, -1.0)
        d0 = make_density(eta, np.zeros(grid.nodes.size), grid)
        d1 = make_density(eta, np.ones(grid.nodes.size), grid)
        # a constant bump in g cancels in the normalized density
        x = np.linspace(1.0, 9.0, 17)
        assert np.allclose(d0.log_pdf(x), d1.log_pdf(x), atol=1e-12)


class TestTruncation:
    def test_full_support_mass_is_one(self):
        d = _flat_density(eta=(2.0, -0.7))
        lo, hi = d.grid.nodes.min(), d.grid.nodes.max()
        assert d.truncated_mass(lo, hi) == pytest.approx(1.0, abs=1e-12)

    def test_additivity(self):
        d = _flat_density(eta=(1.0, -0.4))
        m = d.truncated_mass
        assert m(0.5, 3.3) + m(3.3, 10.0) == pytest.approx(m(0.5, 10.0), abs=1e-12)

    @given(
        split=st.floats(min_value=0.6, max_value=9.9),
        eta1=st.floats(min_value=-0.5, max_value=5.0),
        eta2=st.floats(min_value=-3.0, max_value=-0.1),
    )
    @settings(max_examples=50, deadline=None)
    def test_additivity_property(self, split, eta1, eta2):
        d = _flat_density(eta=(eta1, eta2))
        total = d.truncated_mass(0.5, 10.0)
        parts = d.truncated_mass(0.5, split) + d.truncated_mass(split, 10.0)
        assert parts == pytest.approx(total, abs=1e-12)

    def test_partial_panels_against_fine_oracle(self):
        # truncation endpoints strictly inside panels
        eta = GammaNatural(2.0, -1.0)
        grid = grid_from_range(0.1, 20.0, 129)
        g = 0.2 * np.cos(grid.nodes)
        d = make_density(eta, g, grid)
        l, r = 1.234, 7.891
        # oracle: trapezoid over a fine refinement of the same
        # piecewise-linear weight function w(x) = exp(exponent at nodes),
        # interpolated linearly (this is exactly what _area integrates)
        w = np.exp(
            eta.eta1 * np.log(grid.nodes) + eta.eta2 * grid.nodes + g
            - d.log_normalizer + math.log(1.0)
        )
        fine = np.union1d(np.linspace(l, r, 200001), grid.nodes[
            (grid.nodes > l) & (grid.nodes < r)
        ])
        oracle = np.trapezoid(np.interp(fine, grid.nodes, w), fine)
        assert d.truncated_mass(l, r) == pytest.approx(oracle, rel=1e-7)

    def test_truncated_log_pdf_outside_interval(self):
        d = _flat_density()
        assert d.truncated_log_pdf(0.9, 1.0, 5.0) == -math.inf
        assert d.truncated_log_pdf(5.1, 1.0, 5.0) == -math.inf

    def test_truncated_log_pdf_integrates_to_one(self):
        d = _flat_density(eta=(2.0, -0.6))
        x = np.linspace(1.0, 6.0, 50001)
        p = np.exp([d.truncated_log_pdf(xi, 1.0, 6.0) for xi in x])
        assert np.trapezoid(p, x) == pytest.approx(1.0, abs=1e-3)

    def test_zero_mass_interval_raises(self):
        d = _flat_density(low=0.5, high=10.0)
        with pytest.raises(InfeasibleTruncationError):
            d.truncated_log_pdf(200.0, 100.0, 300.0)


class TestSampling:
    def test_samples_within_interval(self, rng):
        d = _flat_density(eta=(2.0, -0.5))
        s = _draw(d, 1.5, 4.0, 500, rng)
        assert np.all((s >= 1.5) & (s <= 4.0))

    def test_inverse_cdf_matches_mass(self, rng):
        # empirical CDF of draws should agree with truncated_mass
        d = _flat_density(eta=(3.0, -0.9))
        l, r = 1.0, 8.0
        s = _draw(d, l, r, 40000, rng)
        for q in (2.0, 3.5, 6.0):
            expected = d.truncated_mass(l, q) / d.truncated_mass(l, r)
            assert np.mean(s <= q) == pytest.approx(expected, abs=0.01)

    def test_deterministic(self):
        d = _flat_density()
        a = _draw(d, 1.0, 5.0, 10, np.random.default_rng(3))
        b = _draw(d, 1.0, 5.0, 10, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_infeasible_raises(self, rng):
        d = _flat_density()
        with pytest.raises(InfeasibleTruncationError):
            d.sample_truncated(100.0, 200.0, rng)


class TestExport:
    def test_csv_round_trips(self, tmp_path):
        d = _flat_density(eta=(1.0, -1.0))
        path = tmp_path / "density.csv"
        d.export_csv(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.allclose(data[:, 0], d.grid.nodes)
        assert np.allclose(data[:, 1], d.log_pdf(d.grid.nodes))


class TestGammaDensityHelper:
    def test_matches_parametric_form(self):
        eta = GammaNatural(4.0, -2.0)
        d = gamma_density(eta, grid_from_range(1e-5, 20.0, 50001))
        x = np.array([0.3, 1.0, 2.0, 5.0])
        assert np.allclose(d.log_pdf(x), gamma_log_density(eta, x), atol=1e-5)
