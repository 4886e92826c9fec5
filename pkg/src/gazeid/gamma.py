"""Gamma distribution in natural-parameter (exponential family) form.

The density is exp(eta1*log(x) + eta2*x) / Z(eta) on (0, inf), with
Z(eta) = Gamma(eta1+1) / (-eta2)**(eta1+1).  Equivalently shape = eta1+1
and rate = -eta2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special


class GammaError(ValueError):
    pass


@dataclass(frozen=True)
class GammaNatural:
    eta1: float
    eta2: float

    def __post_init__(self):
        if not is_valid_eta(self.eta1, self.eta2):
            raise GammaError(
                f"natural parameters ({self.eta1}, {self.eta2}) not integrable: "
                "need eta1 > -1 and eta2 < 0"
            )


def is_valid_eta(eta1: float, eta2: float) -> bool:
    return math.isfinite(eta1) and math.isfinite(eta2) and eta1 > -1.0 and eta2 < 0.0


def log_partition(eta1: float, eta2: float) -> float:
    """log Z(eta) = log Gamma(eta1+1) - (eta1+1) log(-eta2)."""
    return float(special.gammaln(eta1 + 1.0) - (eta1 + 1.0) * math.log(-eta2))


def log_density(params: GammaNatural, x) -> float:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise GammaError("gamma density is defined on x > 0")
    out = params.eta1 * np.log(x) + params.eta2 * x - log_partition(
        params.eta1, params.eta2
    )
    return float(out) if out.ndim == 0 else out


def to_shape_rate(params: GammaNatural) -> tuple[float, float]:
    return params.eta1 + 1.0, -params.eta2


def from_shape_rate(shape: float, rate: float) -> GammaNatural:
    if not (shape > 0 and rate > 0):
        raise GammaError(f"shape and rate must be positive, got ({shape}, {rate})")
    return GammaNatural(eta1=shape - 1.0, eta2=-rate)


def fit_mle(samples) -> GammaNatural:
    """Maximum-likelihood fit via root-finding on the shape equation
    log(k) - digamma(k) = log(mean) - mean(log)."""
    y = np.asarray(samples, dtype=float)
    if y.size < 2:
        raise GammaError(f"need at least 2 samples, got {y.size}")
    if np.any(y <= 0):
        raise GammaError("all samples must be positive")
    mean = float(np.mean(y))
    mean_log = float(np.mean(np.log(y)))
    s = math.log(mean) - mean_log
    if not s > 0:  # all samples equal (up to rounding)
        raise GammaError("degenerate sample: all values equal")

    def eq(k):
        return math.log(k) - special.digamma(k) - s

    lo, hi = 1e-3, 1e3
    if eq(lo) < 0 or eq(hi) > 0:
        raise GammaError(f"shape estimate outside bracket [{lo}, {hi}]")
    shape = optimize.brentq(eq, lo, hi, xtol=1e-14, rtol=1e-15)
    # Newton polish; eq' = 1/k - trigamma(k)
    for _ in range(5):
        step = eq(shape) / (1.0 / shape - special.polygamma(1, shape))
        if shape - step <= 0:
            break
        shape -= step
    if abs(eq(shape)) > 1e-8:
        raise GammaError("shape equation did not converge")
    rate = shape / mean
    return from_shape_rate(shape, rate)


def sample(params: GammaNatural, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 0:
        raise GammaError(f"count must be >= 0, got {count}")
    shape, rate = to_shape_rate(params)
    return rng.gamma(shape, 1.0 / rate, size=count)
