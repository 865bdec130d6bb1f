"""Problem definitions: dynamics variants, cost triples, finite control sets,
the assembled game, and a sampled check of the decreasing-differences
(submodularity) condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .measures import (
    DiscreteMeasure,
    StateGrid,
    TimeGrid,
    dominates,
)


def _as_fn(v) -> Callable[[float], float]:
    """Turn a constant or a callable of time into a callable of time."""
    if callable(v):
        return v
    c = float(v)
    return lambda t: c


class ControlSet:
    """Finite, strictly increasing set of control values."""

    def __init__(self, values):
        v = np.array(values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("control set is empty")
        if np.any(np.diff(v) <= 0):
            raise ValueError("control values must be strictly increasing")
        v.setflags(write=False)
        self.values = v

    @classmethod
    def uniform(cls, lo: float, hi: float, size: int) -> "ControlSet":
        if size == 1:
            return cls([lo])
        return cls(np.linspace(lo, hi, int(size)))

    @property
    def size(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"ControlSet([{self.values[0]:g}, {self.values[-1]:g}], size={self.size})"


# -- dynamics -----------------------------------------------------------------

class Dynamics:
    """Base class for controlled drifts with constant volatility ``sigma``.

    ``drift(t, x, a, m_shift)`` is evaluated with numpy broadcasting; ``x``
    is typically a column of grid values and ``a`` a row of controls.
    ``m_shift`` is the mean-field drift shift (ignored by variants that do
    not depend on the measure).
    """

    mean_field = False
    geometric = False

    def __init__(self, sigma: float):
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self.sigma = float(sigma)

    def drift(self, t, x, a, m_shift=0.0):
        raise NotImplementedError

    def local_vol(self, x):
        return np.full(np.shape(x), self.sigma)

    def shift(self, mean: float) -> float:
        return 0.0


class AffineDynamics(Dynamics):
    """``b(t, x, a) = c(t) + p(t) x + q(t) a`` with additive noise."""

    def __init__(self, c=0.0, p=0.0, q=1.0, sigma: float = 0.0):
        super().__init__(sigma)
        self.c, self.p, self.q = _as_fn(c), _as_fn(p), _as_fn(q)

    def drift(self, t, x, a, m_shift=0.0):
        return self.c(t) + self.p(t) * np.asarray(x) + self.q(t) * np.asarray(a)

    def drift_bound_coeffs(self, times, controls: ControlSet):
        """(beta0, beta1) with ``|b| <= beta0 + beta1 |x|`` on the time grid."""
        amax = float(np.max(np.abs(controls.values)))
        ts = np.asarray(times)
        c = max(abs(self.c(t)) for t in ts)
        p = max(abs(self.p(t)) for t in ts)
        q = max(abs(self.q(t)) for t in ts)
        return c + q * amax, p


class GeometricDynamics(Dynamics):
    """``dX = b(t, X, a) X dt + sigma X dW`` with a bounded rate ``b``."""

    geometric = True

    def __init__(self, rate: Callable, sigma: float = 0.0):
        super().__init__(sigma)
        self.rate = rate

    def drift(self, t, x, a, m_shift=0.0):
        x = np.asarray(x)
        return self.rate(t, x, np.asarray(a)) * x

    def local_vol(self, x):
        return self.sigma * np.asarray(x, dtype=float)


class GeometricMeanFieldDynamics(Dynamics):
    """``dX = X (a + m(mean)) dt + sigma X dW``.

    ``m`` is a bounded nondecreasing function of the population mean, so it
    is monotone for first-order stochastic dominance.
    """

    geometric = True
    mean_field = True

    def __init__(self, m: Callable[[float], float], m_bound: float, sigma: float = 0.0):
        super().__init__(sigma)
        self.m = m
        self.m_bound = float(m_bound)

    def shift(self, mean: float) -> float:
        return float(self.m(mean))

    def drift(self, t, x, a, m_shift=0.0):
        x = np.asarray(x)
        return x * (np.asarray(a) + m_shift)

    def local_vol(self, x):
        return self.sigma * np.asarray(x, dtype=float)


class OUMeanFieldDynamics(Dynamics):
    """``dX = (kappa X + a + m(mean)) dt + sigma dW``."""

    mean_field = True

    def __init__(self, kappa: float, m: Callable[[float], float], m_bound: float,
                 sigma: float = 0.0):
        super().__init__(sigma)
        self.kappa = float(kappa)
        self.m = m
        self.m_bound = float(m_bound)

    def shift(self, mean: float) -> float:
        return float(self.m(mean))

    def drift(self, t, x, a, m_shift=0.0):
        return self.kappa * np.asarray(x) + np.asarray(a) + m_shift

    def drift_bound_coeffs(self, times, controls: ControlSet):
        return float(np.max(np.abs(controls.values))) + self.m_bound, abs(self.kappa)


# -- costs ----------------------------------------------------------------------

class CostModel:
    """Running cost ``f(t, x, mu) + l(t, x, a)`` and terminal cost ``g(x, mu)``.

    ``f`` and ``g`` receive an array of states and a :class:`DiscreteMeasure`
    and return one value per state.  ``l`` is broadcast over ``x`` (column)
    and ``a`` (row).  Costs whose measure dependence goes through the mean
    only also expose ``f_mean(t, x, m)`` and ``g_mean(x, m)``; those are the
    costs usable in the common-noise game.
    """

    def __init__(self, f, l, g, *, f_mean=None, g_mean=None, coupled=True,
                 name="cost", params=None):
        self.f = f
        self.l = l
        self.g = g
        self.f_mean = f_mean
        self.g_mean = g_mean
        self.coupled = coupled
        self.name = name
        self.params = dict(params or {})

    @classmethod
    def from_mean(cls, f_mean, l, g_mean, **kw) -> "CostModel":
        """Build a cost whose measure argument enters through its mean only."""
        return cls(
            lambda t, x, mu: f_mean(t, x, mu.mean()),
            l,
            lambda x, mu: g_mean(x, mu.mean()),
            f_mean=f_mean,
            g_mean=g_mean,
            **kw,
        )

    @property
    def mean_coupled(self) -> bool:
        return self.f_mean is not None and self.g_mean is not None

    def running(self, t, x, mu, a):
        """``f + l`` on the (state, control) product, shape ``(M, K)``."""
        x = np.asarray(x, dtype=float)
        fx = np.broadcast_to(np.asarray(self.f(t, x, mu), dtype=float), x.shape)
        lx = self.l(t, x[:, None], np.asarray(a, dtype=float)[None, :])
        return fx[:, None] + np.broadcast_to(lx, (x.size, np.size(a)))

    def terminal(self, x, mu):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.g(x, mu), dtype=float), x.shape).copy()

    def __repr__(self):
        return f"CostModel({self.name!r})"


def _quadratic_control_cost(weight=1.0):
    w = float(weight)
    return lambda t, x, a: 0.5 * w * np.asarray(a) ** 2 + 0.0 * np.asarray(x)


def lq_model(c=0.0, p=0.0, q=1.0, n=1.0, m=1.0, mhat=0.0, h=1.0, hhat=0.0, *,
             sigma: float = 0.0, horizon: float = 1.0, enforce_signs: bool = True,
             check_times: Optional[Sequence[float]] = None):
    """Linear dynamics with quadratic costs coupled through the mean.

    ``f + l = n a^2 / 2 + (m x + mhat <id, mu>)^2 / 2`` and
    ``g = (h x + hhat <id, mu>)^2 / 2`` where ``h`` and ``hhat`` are read at
    the horizon.  Coefficients are constants or callables of time.  With
    ``enforce_signs`` the model is rejected unless ``q, n > 0`` and
    ``m mhat <= 0``, ``h hhat <= 0``, which is what makes it submodular.
    """
    cf, pf, qf, nf, mf, mhf, hf, hhf = map(_as_fn, (c, p, q, n, m, mhat, h, hhat))
    ts = np.linspace(0.0, horizon, 101) if check_times is None else np.asarray(check_times)
    if min(qf(t) for t in ts) <= 0 or min(nf(t) for t in ts) <= 0:
        raise ValueError("lq_model needs q > 0 and n > 0")
    if enforce_signs:
        if any(mf(t) * mhf(t) > 0 for t in ts):
            raise ValueError("m * mhat > 0: running cost is not submodular")
        if hf(horizon) * hhf(horizon) > 0:
            raise ValueError("h * hhat > 0: terminal cost is not submodular")
    dyn = AffineDynamics(cf, pf, qf, sigma=sigma)
    hT, hhT = hf(horizon), hhf(horizon)

    def f_mean(t, x, mean):
        return 0.5 * (mf(t) * np.asarray(x) + mhf(t) * mean) ** 2

    def l(t, x, a):
        return 0.5 * nf(t) * np.asarray(a) ** 2 + 0.0 * np.asarray(x)

    def g_mean(x, mean):
        return 0.5 * (hT * np.asarray(x) + hhT * mean) ** 2

    coupled = any(mhf(t) != 0 for t in ts) or hhT != 0
    params = dict(c=cf, p=pf, q=qf, n=nf, m=mf, mhat=mhf, h=hT, hhat=hhT,
                  sigma=float(sigma), horizon=float(horizon))
    cost = CostModel.from_mean(f_mean, l, g_mean, coupled=coupled, name="lq", params=params)
    return dyn, cost


def threshold_model(penalty: float = 0.0) -> CostModel:
    """``f = 0``, ``l = a^2/2``, ``g(x, mu) = (x - 1{<id, mu> >= 0})^2``.

    The terminal cost jumps when the population mean crosses zero.  A
    nonnegative ``penalty * 1{<id, mu> >= 0}`` may be added to ``g``; it is
    additively separable so submodularity is unaffected, and for a large
    enough penalty ``g`` becomes nondecreasing in ``mu``.
    """
    pen = float(penalty)

    def f_mean(t, x, mean):
        return np.zeros(np.shape(x))

    def g_mean(x, mean):
        ind = 1.0 if mean >= 0 else 0.0
        return (np.asarray(x) - ind) ** 2 + pen * ind

    return CostModel.from_mean(f_mean, _quadratic_control_cost(), g_mean,
                               name="threshold", params={"penalty": pen})


def order1_model(gamma: Callable, terminal_gamma: Optional[Callable] = None,
                 control_weight: float = 1.0, running_weight: float = 1.0) -> CostModel:
    """Interaction of order one: ``phi(x, mu) = sum_j gamma(x, y_j) mu(y_j)``.

    ``gamma`` is used for the running cost (scaled by ``running_weight``) and
    ``terminal_gamma`` (default ``gamma``) for the terminal cost.
    """
    tg = gamma if terminal_gamma is None else terminal_gamma
    rw = float(running_weight)

    def integrate(kernel, x, mu):
        x = np.asarray(x, dtype=float)
        y = mu.grid.points
        return kernel(x[:, None], y[None, :]) @ mu.weights

    def f(t, x, mu):
        return rw * integrate(gamma, x, mu)

    def g(x, mu):
        return integrate(tg, x, mu)

    return CostModel(f, _quadratic_control_cost(control_weight), g, name="order1")


# -- submodularity check -------------------------------------------------------

@dataclass
class SubmodularityReport:
    quadruples: int
    max_violation: float
    witness: Optional[tuple]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol


def _dd_violation(d: np.ndarray):
    """max over i < j of d[j] - d[i], with the maximising pair."""
    running_min = np.minimum.accumulate(d[:-1])
    argmins = np.zeros(d.size - 1, dtype=int)
    best = 0
    for j in range(1, d.size - 1):
        if d[j] < d[best]:
            best = j
        argmins[j] = best
    gaps = d[1:] - running_min
    j = int(np.argmax(gaps))
    return float(gaps[j]), int(argmins[j]), j + 1


def check_submodularity(cost: CostModel, grid: StateGrid, pairs, times=(0.0,),
                        tol: float = 1e-10) -> SubmodularityReport:
    """Sampled falsifier for decreasing differences of ``f(t, ., .)`` and ``g``.

    For every supplied pair ``mu <=st mubar`` and every grid pair
    ``x < xbar`` evaluates
    ``phi(xbar, mubar) - phi(x, mubar) - phi(xbar, mu) + phi(x, mu)``
    and reports the largest value (clipped below at zero).
    """
    x = grid.points
    worst, witness = 0.0, None
    count = 0
    phis = [(f"f(t={t:g})", lambda xx, mu, t=t: cost.f(t, xx, mu)) for t in times]
    phis.append(("g", cost.g))
    for mu, mubar in pairs:
        if not dominates(mu, mubar):
            raise ValueError("measure pair is not ordered: need mu <=st mubar")
        for label, phi in phis:
            d = (np.broadcast_to(phi(x, mubar), x.shape)
                 - np.broadcast_to(phi(x, mu), x.shape)).astype(float)
            v, i, j = _dd_violation(d)
            count += x.size * (x.size - 1) // 2
            if v > worst:
                worst, witness = v, (label, float(x[i]), float(x[j]), mu, mubar)
    return SubmodularityReport(count, worst, witness, tol)


def check_mean_field_monotone(dynamics: Dynamics, pairs) -> int:
    """Count ordered pairs for which the mean-field shift decreases."""
    if not dynamics.mean_field:
        return 0
    return sum(dynamics.shift(a.mean()) > dynamics.shift(b.mean()) + 1e-12 for a, b in pairs)


# -- assembled problem ------------------------------------------------------------

@dataclass
class MFGProblem:
    """Everything needed to evaluate the best-response map on a grid."""

    dynamics: Dynamics
    cost: CostModel
    controls: ControlSet
    grid: StateGrid
    times: TimeGrid
    initial: DiscreteMeasure
    moment_bound: Optional[float] = None
    name: str = "mfg"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.initial.grid != self.grid:
            raise ValueError("initial law must live on the state grid")
        if self.dynamics.geometric and self.grid.points[0] <= 0:
            raise ValueError("geometric dynamics need a positive state grid")
