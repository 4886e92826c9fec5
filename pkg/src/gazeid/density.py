"""Semiparametric density f(x) proportional to exp(eta.u(x) + g(x)).

The latent function g is represented at the union of the training
observations and a set of equally spaced quadrature points; all integrals
(normalizer, truncation masses, sampling CDF) use the 2-point Newton-Cotes
(trapezoid) rule over that node set.  Between nodes the exponent is
linearly interpolated; beyond the grid ends g is held constant so the
gamma envelope dominates the tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .gamma import GammaNatural, log_partition
from .gp import LatentFunction

GRID_LOW_FLOOR = 1e-6
DEFAULT_QUADRATURE_COUNT = 512
DEFAULT_EXTENSION_FACTOR = 1.5

NEG_INF = -math.inf


class DensityError(ValueError):
    pass


class InfeasibleTruncationError(DensityError):
    """Truncation interval carries no probability mass."""


@dataclass(frozen=True)
class SupportGrid:
    observation_points: np.ndarray
    quadrature_points: np.ndarray
    grid_low: float
    grid_high: float

    def __post_init__(self):
        obs = np.asarray(self.observation_points, dtype=float)
        quad = np.asarray(self.quadrature_points, dtype=float)
        if quad.size < 2 or np.any(np.diff(quad) <= 0):
            raise DensityError("quadrature points must be >= 2 and increasing")
        steps = np.diff(quad)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise DensityError("quadrature points must be equally spaced")
        if obs.size and (obs.min() < self.grid_low or obs.max() > self.grid_high):
            raise DensityError("observation points outside grid range")
        nodes = np.unique(np.concatenate([obs, quad]))
        object.__setattr__(self, "observation_points", np.sort(obs))
        object.__setattr__(self, "quadrature_points", quad)
        object.__setattr__(self, "_nodes", nodes)

    @property
    def nodes(self) -> np.ndarray:
        """Sorted union of observation and quadrature points."""
        return self._nodes


def build_grid(
    observations,
    quadrature_count: int = DEFAULT_QUADRATURE_COUNT,
    extension_factor: float = DEFAULT_EXTENSION_FACTOR,
) -> SupportGrid:
    obs = np.sort(np.asarray(observations, dtype=float))
    if obs.size == 0:
        raise DensityError("cannot build a grid from zero observations")
    if obs[0] <= 0:
        raise DensityError("observations must be positive")
    if quadrature_count < 2:
        raise DensityError("quadrature_count must be >= 2")
    if extension_factor < 1.0:
        raise DensityError("extension_factor must be >= 1")
    low = min(max(GRID_LOW_FLOOR, float(obs[0]) / extension_factor), float(obs[0]))
    high = float(obs[-1]) * extension_factor
    if not high > low:
        high = low * 2.0
    return SupportGrid(
        observation_points=obs,
        quadrature_points=np.linspace(low, high, quadrature_count),
        grid_low=low,
        grid_high=high,
    )


def grid_from_range(low: float, high: float,
                    quadrature_count: int = DEFAULT_QUADRATURE_COUNT) -> SupportGrid:
    """Grid with no observation points (ground-truth/default densities)."""
    if not (0 < low < high):
        raise DensityError(f"need 0 < low < high, got ({low}, {high})")
    return SupportGrid(
        observation_points=np.empty(0),
        quadrature_points=np.linspace(low, high, quadrature_count),
        grid_low=low,
        grid_high=high,
    )


def log_normalizer(eta: GammaNatural, g_values, grid: SupportGrid) -> float:
    """Trapezoid estimate of log integral of exp(eta.u(x) + g(x)) over the
    grid, via log-sum-exp over panel contributions."""
    nodes = grid.nodes
    le = _log_exponent(eta.eta1, eta.eta2, nodes, np.asarray(g_values, dtype=float))
    if not np.all(np.isfinite(le)):
        raise DensityError("non-finite integrand in normalizer")
    dx = np.diff(nodes)
    panels = np.log(0.5 * dx) + np.logaddexp(le[:-1], le[1:])
    return float(logsumexp(panels))


def _log_exponent(eta1, eta2, x, g):
    return eta1 * np.log(x) + eta2 * x + g


class SemiparametricDensity:
    """Immutable density over the grid; evaluation/sampling helpers are
    precomputed from (eta, g) once."""

    def __init__(self, eta: GammaNatural, g: LatentFunction, grid: SupportGrid):
        nodes = grid.nodes
        if g.points.shape != nodes.shape or not np.array_equal(g.points, nodes):
            raise DensityError("latent function must be defined on the grid nodes")
        self.eta = eta
        self.g = g
        self.grid = grid
        le = _log_exponent(eta.eta1, eta.eta2, nodes, g.values)
        if not np.all(np.isfinite(le)):
            raise DensityError("non-finite exponent on grid nodes")
        c = float(le.max())
        w = np.exp(le - c)
        dx = np.diff(nodes)
        panel_areas = 0.5 * dx * (w[:-1] + w[1:])
        cum = np.concatenate([[0.0], np.cumsum(panel_areas)])
        total = float(cum[-1])
        self.log_normalizer = math.log(total) + c
        self._nodes = nodes
        self._w = w
        self._panel_areas = panel_areas
        self._cum = cum
        self._total = total
        self._scale = c

    # -- evaluation ---------------------------------------------------------

    def log_pdf(self, x) -> float:
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        g_tilde = np.interp(x_arr, self._nodes, self.g.values)
        pos = x_arr > 0
        out = np.full(x_arr.shape, NEG_INF)
        out[pos] = (
            _log_exponent(self.eta.eta1, self.eta.eta2, x_arr[pos], g_tilde[pos])
            - self.log_normalizer
        )
        return float(out[0]) if np.asarray(x).ndim == 0 else out

    def truncated_mass(self, l: float, r: float) -> float:
        """Probability mass in [l, r] under the trapezoid rule, with partial
        end panels handled by linear interpolation of the integrand."""
        if not l < r:
            raise DensityError(f"need l < r, got ({l}, {r})")
        lo = max(l, self._nodes[0])
        hi = min(r, self._nodes[-1])
        if not lo < hi:
            return 0.0
        return self._area(lo, hi) / self._total

    def _area(self, lo: float, hi: float) -> float:
        nodes, w, pa = self._nodes, self._w, self._panel_areas
        i0 = int(np.searchsorted(nodes, lo, side="right"))
        i1 = int(np.searchsorted(nodes, hi, side="left"))
        w_lo = float(np.interp(lo, nodes, w))
        w_hi = float(np.interp(hi, nodes, w))
        if i0 > i1 - 1:  # no interior node
            return 0.5 * (w_lo + w_hi) * (hi - lo)
        area = 0.5 * (w_lo + w[i0]) * (nodes[i0] - lo)
        area += float(np.sum(pa[i0:i1 - 1]))
        area += 0.5 * (w[i1 - 1] + w_hi) * (hi - nodes[i1 - 1])
        return area

    def truncated_log_pdf(self, x: float, l: float, r: float) -> float:
        if not l < r:
            raise DensityError(f"need l < r, got ({l}, {r})")
        if not l <= x <= r:
            return NEG_INF
        mass = self.truncated_mass(l, r)
        if mass <= 0.0:
            raise InfeasibleTruncationError(
                f"truncation [{l}, {r}] has zero mass on the grid"
            )
        return self.log_pdf(x) - math.log(mass)

    # -- sampling -----------------------------------------------------------

    def sample_truncated(self, l: float, r: float,
                         rng: np.random.Generator) -> float:
        """Inverse-CDF draw from the piecewise-trapezoid density on [l, r]."""
        if not l < r:
            raise DensityError(f"need l < r, got ({l}, {r})")
        nodes, w = self._nodes, self._w
        lo = max(l, nodes[0])
        hi = min(r, nodes[-1])
        if not lo < hi:
            raise InfeasibleTruncationError(
                f"truncation [{l}, {r}] has zero mass on the grid"
            )
        i0 = int(np.searchsorted(nodes, lo, side="right"))
        i1 = int(np.searchsorted(nodes, hi, side="left"))
        xs = np.concatenate([[lo], nodes[i0:i1], [hi]])
        ws = np.concatenate(
            [[np.interp(lo, nodes, w)], w[i0:i1], [np.interp(hi, nodes, w)]]
        )
        dx = np.diff(xs)
        areas = 0.5 * dx * (ws[:-1] + ws[1:])
        cum = np.concatenate([[0.0], np.cumsum(areas)])
        total = float(cum[-1])
        if total <= 0.0:
            raise InfeasibleTruncationError(
                f"truncation [{l}, {r}] has zero mass on the grid"
            )
        target = rng.uniform() * total
        j = min(int(np.searchsorted(cum, target, side="right")) - 1, xs.size - 2)
        rem = target - cum[j]
        width = xs[j + 1] - xs[j]
        slope = (ws[j + 1] - ws[j]) / width
        if abs(slope) * width < 1e-12 * max(ws[j], 1e-300):
            t = rem / ws[j] if ws[j] > 0 else 0.5 * width
        else:
            disc = ws[j] ** 2 + 2.0 * slope * rem
            t = (math.sqrt(max(disc, 0.0)) - ws[j]) / slope
        return float(min(max(xs[j] + t, lo), hi))

    def export_csv(self, path):
        """Write (x, log_pdf) over the grid nodes for external plotting."""
        lp = self.log_pdf(self._nodes)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("x,log_pdf\n")
            for x, v in zip(self._nodes, lp):
                fh.write(f"{float(x)!r},{float(v)!r}\n")


def make_density(eta: GammaNatural, g_values, grid: SupportGrid) -> SemiparametricDensity:
    g = LatentFunction(points=grid.nodes,
                       values=np.asarray(g_values, dtype=float))
    return SemiparametricDensity(eta=eta, g=g, grid=grid)


def gamma_density(eta: GammaNatural, grid: SupportGrid) -> SemiparametricDensity:
    """Pure-gamma member of the family (g identically zero)."""
    return make_density(eta, np.zeros(grid.nodes.size), grid)
