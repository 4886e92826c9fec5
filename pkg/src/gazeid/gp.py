"""Zero-mean Gaussian processes on finite point sets.

Squared-exponential kernel, Cholesky-based prior sampling and log prior
density.  Factorizations are cached per (points, config) since MCMC reuses
the same grid for thousands of draws.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular


class NumericalError(RuntimeError):
    pass


# Jitter escalates by x10 from JITTER_FRACTION*amplitude up to
# MAX_JITTER_FRACTION*amplitude before giving up.
JITTER_FRACTION = 1e-6
MAX_JITTER_FRACTION = 1e-2


@dataclass(frozen=True)
class CovarianceConfig:
    amplitude: float
    bandwidth: float
    jitter: Optional[float] = None

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be > 0, got {self.amplitude}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.jitter is None:
            object.__setattr__(self, "jitter", JITTER_FRACTION * self.amplitude)
        if not self.jitter > 0:
            raise ValueError(f"jitter must be > 0, got {self.jitter}")


@dataclass(frozen=True)
class LatentFunction:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if points.shape != values.shape or points.ndim != 1:
            raise ValueError("points and values must be 1-d arrays of equal length")
        if points.size and np.any(np.diff(points) <= 0):
            raise ValueError("points must be strictly increasing")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)


def _check_points(points: np.ndarray):
    if points.size == 0:
        raise ValueError("empty point set")
    if np.any(np.diff(points) <= 0):
        raise ValueError("points must be strictly increasing")


def covariance_matrix(points, config: CovarianceConfig) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    _check_points(points)
    d = points[:, None] - points[None, :]
    K = config.amplitude * np.exp(-0.5 * (d / config.bandwidth) ** 2)
    K += config.jitter * np.eye(points.size)
    return K


_chol_cache: dict = {}
_chol_lock = threading.Lock()


def cholesky_factor(points, config: CovarianceConfig) -> np.ndarray:
    """Lower Cholesky factor of covariance_matrix(points, config), with
    jitter escalation on failure.  Cached."""
    points = np.asarray(points, dtype=float)
    key = (points.tobytes(), config.amplitude, config.bandwidth, config.jitter)
    with _chol_lock:
        cached = _chol_cache.get(key)
    if cached is not None:
        return cached
    K = covariance_matrix(points, config)
    jitter = config.jitter
    while True:
        try:
            L = np.linalg.cholesky(K)
            break
        except np.linalg.LinAlgError:
            if jitter >= MAX_JITTER_FRACTION * config.amplitude:
                raise NumericalError(
                    f"covariance not factorizable at jitter {jitter}"
                ) from None
            new_jitter = jitter * 10.0
            K += (new_jitter - jitter) * np.eye(points.size)
            jitter = new_jitter
    with _chol_lock:
        if len(_chol_cache) > 64:
            _chol_cache.clear()
        _chol_cache[key] = L
    return L


def sample_prior(points, config: CovarianceConfig,
                 rng: np.random.Generator) -> LatentFunction:
    points = np.asarray(points, dtype=float)
    L = cholesky_factor(points, config)
    z = rng.standard_normal(points.size)
    return LatentFunction(points=points, values=L @ z)


def log_prior(g: LatentFunction, config: CovarianceConfig) -> float:
    """Multivariate normal log density of g.values under the zero-mean GP."""
    L = cholesky_factor(g.points, config)
    n = g.points.size
    if g.values.size != n:
        raise ValueError("dimension mismatch between points and values")
    v = solve_triangular(L, g.values, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * float(v @ v) - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)


def average_pairwise_distance(points) -> float:
    """Mean |x_i - x_j| over all pairs, O(n log n) via sorted prefix sums."""
    x = np.sort(np.asarray(points, dtype=float))
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 points")
    i = np.arange(n)
    total = float(np.sum((2 * i - n + 1) * x))
    return 2.0 * total / (n * (n - 1))
