"""Probability measures on a fixed state grid and the first-order
stochastic dominance lattice.

A measure is stored by its weights on the grid nodes together with its
distribution function ``cdf[j] = P(X <= x_j)``.  The order used throughout
the package is

    mu <=st nu   iff   cdf_mu[j] >= cdf_nu[j] for every node j,

so the meet of two measures takes the pointwise *maximum* of the CDFs and
the join the pointwise *minimum*.  Flows of measures (one measure per time
node) are ordered node by node.
"""

from __future__ import annotations

import csv
import io
from typing import Callable, Iterable, Sequence

import numpy as np

CDF_TOL = 1e-12


class GridMismatchError(ValueError):
    """Raised when two objects living on different grids are combined."""


class StateGrid:
    """Uniform, strictly increasing grid of state values."""

    def __init__(self, points):
        pts = np.array(points, dtype=float).ravel()
        if pts.size < 2:
            raise ValueError("a state grid needs at least two points")
        steps = np.diff(pts)
        if np.any(steps <= 0):
            raise ValueError("grid points must be strictly increasing")
        dx = (pts[-1] - pts[0]) / (pts.size - 1)
        if np.max(np.abs(steps - dx)) > 1e-12 * max(abs(dx), 1.0) * pts.size:
            raise ValueError("grid spacing must be uniform")
        pts.setflags(write=False)
        self.points = pts
        self.dx = float(dx)

    @classmethod
    def uniform(cls, lo: float, hi: float, size: int) -> "StateGrid":
        return cls(np.linspace(lo, hi, int(size)))

    @property
    def size(self) -> int:
        return self.points.size

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, StateGrid):
            return NotImplemented
        return self.points.size == other.points.size and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.points.size, float(self.points[0]), float(self.points[-1])))

    def __repr__(self):
        return f"StateGrid([{self.points[0]:g}, {self.points[-1]:g}], size={self.size})"

    def nearest_index(self, x: float) -> int:
        j = int(np.rint((x - self.points[0]) / self.dx))
        return min(max(j, 0), self.size - 1)


class TimeGrid:
    """Uniform time grid ``t_k = k * T / N`` for ``k = 0..N``."""

    def __init__(self, horizon: float, steps: int):
        if steps < 1:
            raise ValueError("need at least one time step")
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.horizon = float(horizon)
        self.steps = int(steps)
        self.dt = self.horizon / self.steps
        times = np.arange(self.steps + 1) * self.dt
        times[-1] = self.horizon
        times.setflags(write=False)
        self.times = times

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.steps == other.steps and self.horizon == other.horizon

    def __hash__(self):
        return hash((self.horizon, self.steps))

    def __repr__(self):
        return f"TimeGrid(T={self.horizon:g}, N={self.steps})"


def _weights_from_cdf(cdf: np.ndarray) -> np.ndarray:
    return np.diff(cdf, prepend=0.0)


def _clean_cdf(weights: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights)
    np.minimum(cdf, 1.0, out=cdf)
    cdf[-1] = 1.0
    return cdf


class DiscreteMeasure:
    """Probability weights on a :class:`StateGrid`.

    Weights are renormalised on construction; tiny negative values produced
    by floating point round-off (above ``-1e-12``) are clipped to zero.
    """

    __slots__ = ("grid", "weights", "cdf")

    def __init__(self, grid: StateGrid, weights):
        w = np.array(weights, dtype=float).ravel()
        if w.size != grid.size:
            raise GridMismatchError(f"expected {grid.size} weights, got {w.size}")
        if np.any(w < -CDF_TOL) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        w = np.clip(w, 0.0, None)
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        w /= total
        w.setflags(write=False)
        cdf = _clean_cdf(w)
        cdf.setflags(write=False)
        self.grid = grid
        self.weights = w
        self.cdf = cdf

    @classmethod
    def from_cdf(cls, grid: StateGrid, cdf) -> "DiscreteMeasure":
        c = np.array(cdf, dtype=float).ravel()
        c = np.maximum.accumulate(np.clip(c, 0.0, 1.0))
        c[-1] = 1.0
        return cls(grid, _weights_from_cdf(c))

    @classmethod
    def point_mass(cls, grid: StateGrid, x: float) -> "DiscreteMeasure":
        w = np.zeros(grid.size)
        w[grid.nearest_index(x)] = 1.0
        return cls(grid, w)

    def mean(self) -> float:
        return float(self.weights @ self.grid.points)

    def expect(self, phi) -> float:
        """Integral of ``phi`` (callable or array of node values)."""
        vals = phi(self.grid.points) if callable(phi) else np.asarray(phi, dtype=float)
        return float(self.weights @ vals)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return self.grid == other.grid and np.max(np.abs(self.cdf - other.cdf)) <= CDF_TOL

    __hash__ = None

    def __repr__(self):
        return f"DiscreteMeasure(mean={self.mean():.6g}, grid={self.grid!r})"


def _check_same_grid(*items):
    g = items[0].grid
    for it in items[1:]:
        if it.grid != g:
            raise GridMismatchError("objects live on different state grids")
    return g


def dominates(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = CDF_TOL) -> bool:
    """Return True iff ``mu <=st nu``, i.e. ``nu`` first-order dominates ``mu``."""
    _check_same_grid(mu, nu)
    return bool(np.all(mu.cdf >= nu.cdf - tol))


def meet(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DiscreteMeasure:
    g = _check_same_grid(mu, nu)
    return DiscreteMeasure(g, _weights_from_cdf(np.maximum(mu.cdf, nu.cdf)))


def join(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DiscreteMeasure:
    g = _check_same_grid(mu, nu)
    return DiscreteMeasure(g, _weights_from_cdf(np.minimum(mu.cdf, nu.cdf)))


def family_sup(measures: Sequence[DiscreteMeasure]) -> DiscreteMeasure:
    """Least upper bound of a finite family: pointwise minimum of the CDFs."""
    measures = list(measures)
    if not measures:
        raise ValueError("empty family")
    g = _check_same_grid(*measures)
    return DiscreteMeasure(g, _weights_from_cdf(np.min([m.cdf for m in measures], axis=0)))


def family_inf(measures: Sequence[DiscreteMeasure]) -> DiscreteMeasure:
    """Greatest lower bound of a finite family: pointwise maximum of the CDFs."""
    measures = list(measures)
    if not measures:
        raise ValueError("empty family")
    g = _check_same_grid(*measures)
    return DiscreteMeasure(g, _weights_from_cdf(np.max([m.cdf for m in measures], axis=0)))


def kolmogorov_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    _check_same_grid(mu, nu)
    return float(np.max(np.abs(mu.cdf - nu.cdf)))


def envelope_bounds(C: float, psi: Callable[[np.ndarray], np.ndarray], grid: StateGrid):
    """Extremal measures dominating/dominated by every law with
    ``E[psi(|X|)] <= C``.

    ``psi`` is a moment function on ``[0, inf)``; it is extended by
    ``psi(s) = psi(0)`` for negative arguments.  Returns ``(mu_min, mu_max)``
    projected on ``grid``; mass beyond the last node is put on that node.
    """
    psi0 = float(psi(np.zeros(1))[0])
    if C < psi0:
        raise ValueError(f"C={C} is smaller than psi(0)={psi0}")
    s = grid.points

    def psi_ext(v):
        v = np.asarray(v, dtype=float)
        out = np.full(v.shape, psi0)
        pos = v > 0
        out[pos] = psi(v[pos])
        return out

    with np.errstate(divide="ignore"):
        lower = np.where(psi_ext(-s) > 0, C / psi_ext(-s), np.inf)
        upper = np.where(psi_ext(s) > 0, C / psi_ext(s), np.inf)
    cdf_min = np.minimum(lower, 1.0)
    cdf_max = np.maximum(1.0 - upper, 0.0)
    return DiscreteMeasure.from_cdf(grid, cdf_min), DiscreteMeasure.from_cdf(grid, cdf_max)


class MeasureFlow:
    """Time-indexed family of measures on one grid, stored as a
    ``(N + 1, M)`` weight array."""

    __slots__ = ("grid", "weights", "cdf")

    def __init__(self, grid: StateGrid, weights):
        w = np.array(weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != grid.size:
            raise GridMismatchError(f"weights must have shape (N+1, {grid.size})")
        if np.any(w < -CDF_TOL) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        w = np.clip(w, 0.0, None)
        w /= w.sum(axis=1, keepdims=True)
        w.setflags(write=False)
        cdf = np.cumsum(w, axis=1)
        np.minimum(cdf, 1.0, out=cdf)
        cdf[:, -1] = 1.0
        cdf.setflags(write=False)
        self.grid = grid
        self.weights = w
        self.cdf = cdf

    @classmethod
    def from_measures(cls, measures: Iterable[DiscreteMeasure]) -> "MeasureFlow":
        measures = list(measures)
        g = _check_same_grid(*measures)
        return cls(g, np.stack([m.weights for m in measures]))

    @classmethod
    def from_cdfs(cls, grid: StateGrid, cdfs) -> "MeasureFlow":
        c = np.maximum.accumulate(np.clip(np.asarray(cdfs, dtype=float), 0.0, 1.0), axis=1)
        c[:, -1] = 1.0
        return cls(grid, np.diff(c, axis=1, prepend=0.0))

    @classmethod
    def constant(cls, initial: DiscreteMeasure, later: DiscreteMeasure, steps: int) -> "MeasureFlow":
        """Flow equal to ``initial`` at t_0 and to ``later`` at every other node."""
        g = _check_same_grid(initial, later)
        w = np.repeat(later.weights[None, :], steps + 1, axis=0)
        w[0] = initial.weights
        return cls(g, w)

    @property
    def steps(self) -> int:
        return self.weights.shape[0] - 1

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, k) -> DiscreteMeasure:
        return DiscreteMeasure(self.grid, self.weights[k])

    @property
    def measures(self) -> list:
        return [self[k] for k in range(len(self))]

    def means(self) -> np.ndarray:
        return self.weights @ self.grid.points

    def __eq__(self, other):
        if not isinstance(other, MeasureFlow):
            return NotImplemented
        return (self.grid == other.grid and self.weights.shape == other.weights.shape
                and np.max(np.abs(self.cdf - other.cdf)) <= CDF_TOL)

    __hash__ = None

    def __repr__(self):
        return f"MeasureFlow(steps={self.steps}, grid={self.grid!r})"


def _check_flows(mu: MeasureFlow, nu: MeasureFlow):
    if mu.grid != nu.grid or mu.weights.shape != nu.weights.shape:
        raise GridMismatchError("flows live on different grids")


def flow_leq(mu: MeasureFlow, nu: MeasureFlow, tol: float = CDF_TOL) -> bool:
    """``mu <=L nu``: ``mu_k <=st nu_k`` at every time node, including 0 and N."""
    _check_flows(mu, nu)
    return bool(np.all(mu.cdf >= nu.cdf - tol))


def flow_meet(mu: MeasureFlow, nu: MeasureFlow) -> MeasureFlow:
    _check_flows(mu, nu)
    return MeasureFlow.from_cdfs(mu.grid, np.maximum(mu.cdf, nu.cdf))


def flow_join(mu: MeasureFlow, nu: MeasureFlow) -> MeasureFlow:
    _check_flows(mu, nu)
    return MeasureFlow.from_cdfs(mu.grid, np.minimum(mu.cdf, nu.cdf))


def flow_distance(mu: MeasureFlow, nu: MeasureFlow) -> float:
    """Sup over time nodes of the Kolmogorov distance."""
    _check_flows(mu, nu)
    return float(np.max(np.abs(mu.cdf - nu.cdf)))


# -- CSV ---------------------------------------------------------------------

FLOW_CSV_HEADER = ("t_index", "x", "weight", "cdf")


def flow_to_csv(flow: MeasureFlow) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(FLOW_CSV_HEADER)
    xs = flow.grid.points
    for k in range(len(flow)):
        for j in range(flow.grid.size):
            wr.writerow((k, repr(float(xs[j])), repr(float(flow.weights[k, j])),
                         repr(float(flow.cdf[k, j]))))
    return buf.getvalue()


def flow_from_csv(text: str) -> MeasureFlow:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or tuple(rows[0].keys()) != FLOW_CSV_HEADER:
        raise ValueError("not a measure-flow CSV")
    steps = max(int(r["t_index"]) for r in rows) + 1
    xs = sorted({float(r["x"]) for r in rows})
    index = {x: j for j, x in enumerate(xs)}
    w = np.zeros((steps, len(xs)))
    for r in rows:
        w[int(r["t_index"]), index[float(r["x"])]] = float(r["weight"])
    return MeasureFlow(StateGrid(xs), w)
