import math

import numpy as np
import pytest

from gazeid.gamma import (
    GammaError,
    GammaNatural,
    fit_mle,
    from_shape_rate,
    is_valid_eta,
    log_density,
    sample,
    to_shape_rate,
)


class TestLogDensity:
    def test_unit_exponential(self):
        assert log_density(GammaNatural(0, -1), 1.0) == pytest.approx(-1.0)

    def test_shape2_rate2(self):
        # pdf = rate^shape / Gamma(shape) * x^(shape-1) e^(-rate x) = 4 e^-2 at x=1
        assert log_density(GammaNatural(1, -2), 1.0) == pytest.approx(
            math.log(4) - 2
        )

    def test_rejects_nonpositive_x(self):
        with pytest.raises(GammaError):
            log_density(GammaNatural(0, -1), 0.0)

    def test_rejects_invalid_eta(self):
        with pytest.raises(GammaError):
            GammaNatural(-1.2, -1)
        with pytest.raises(GammaError):
            GammaNatural(0, 0.5)
        assert not is_valid_eta(0, 0)

    def test_normalizes_for_random_eta(self, rng):
        # quadrature oracle: exp(log_density) integrates to 1
        for _ in range(10):
            eta = GammaNatural(rng.uniform(-0.5, 4), -rng.uniform(0.2, 3))
            shape, rate = to_shape_rate(eta)
            hi = 40 * shape / rate
            x = np.linspace(1e-9, hi, 200001)
            integral = np.trapezoid(np.exp(log_density(eta, x)), x)
            assert integral == pytest.approx(1.0, abs=1e-4)


class TestShapeRate:
    def test_examples(self):
        assert to_shape_rate(GammaNatural(1, -2)) == (2, 2)
        assert from_shape_rate(1, 1) == GammaNatural(0, -1)

    def test_roundtrip(self, rng):
        for _ in range(50):
            shape, rate = rng.uniform(0.01, 20, 2)
            eta = from_shape_rate(shape, rate)
            assert to_shape_rate(eta) == pytest.approx((shape, rate), rel=1e-15)

    def test_rejects_invalid(self):
        with pytest.raises(GammaError):
            from_shape_rate(-1, 1)
        with pytest.raises(GammaError):
            from_shape_rate(1, 0)


def _loglik(shape, rate, y):
    return float(
        np.sum((shape - 1) * np.log(y) - rate * y)
        + y.size * (shape * math.log(rate) - math.lgamma(shape))
    )


class TestFitMLE:
    def test_recovers_shape2_rate1(self):
        y = sample(from_shape_rate(2, 1), 100_000, np.random.default_rng(7))
        shape, rate = to_shape_rate(fit_mle(y))
        assert 1.95 <= shape <= 2.05
        # grid-search oracle over shape (rate profiled out as shape/mean)
        mean = y.mean()
        grid = np.linspace(0.05, 10, 400)
        best = grid[np.argmax([_loglik(k, k / mean, y) for k in grid])]
        assert abs(shape - best) < 0.05

    def test_degenerate_samples(self):
        with pytest.raises(GammaError):
            fit_mle([1.0, 1.0, 1.0])
        with pytest.raises(GammaError):
            fit_mle([2.0])
        with pytest.raises(GammaError):
            fit_mle([1.0, -1.0])

    def test_local_optimality(self, rng):
        y = sample(from_shape_rate(3, 2), 2000, rng)
        shape, rate = to_shape_rate(fit_mle(y))
        ll_hat = _loglik(shape, rate, y)
        for _ in range(100):
            s = shape * math.exp(rng.normal(0, 0.1))
            r = rate * math.exp(rng.normal(0, 0.1))
            assert _loglik(s, r, y) <= ll_hat + 1e-9


class TestSample:
    def test_count_zero(self, rng):
        assert sample(from_shape_rate(2, 1), 0, rng).size == 0

    def test_mean(self):
        y = sample(from_shape_rate(3, 2), 100_000, np.random.default_rng(3))
        assert 1.47 <= y.mean() <= 1.53

    def test_deterministic(self):
        a = sample(from_shape_rate(2, 1), 10, np.random.default_rng(5))
        b = sample(from_shape_rate(2, 1), 10, np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_rejects_negative_count(self, rng):
        with pytest.raises(GammaError):
            sample(from_shape_rate(2, 1), -1, rng)
