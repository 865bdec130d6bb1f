"""Semi-explicit reference solution of the linear-quadratic game.

For the quadratic ansatz ``V(t, x) = A x^2 / 2 + B x + C`` the HJB equation
reduces, given the mean flow ``mbar``, to

    -A' = 2 p A - (q^2/n) A^2 + m^2,                 A(T) = h^2
    -B' = (p - (q^2/n) A) B + A c + m mhat mbar,      B(T) = h hhat mbar(T)
    -C' = c B - (q^2/2n) B^2 + mhat^2 mbar^2 / 2 + sigma^2 A / 2,
                                                     C(T) = hhat^2 mbar(T)^2 / 2

and the optimal feedback ``a = -(q/n)(A x + B)`` moves the mean by
``mbar' = c + p mbar - (q^2/n)(A mbar + B)``.  Consistency of the mean is
found by damped fixed-point iteration with RK4 on the time grid; an
independent shooting solution via :func:`scipy.integrate.solve_ivp` is
provided as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .measures import MeasureFlow, TimeGrid
from .model import _as_fn


@dataclass
class LQParams:
    c: Callable = 0.0
    p: Callable = 0.0
    q: Callable = 1.0
    n: Callable = 1.0
    m: Callable = 1.0
    mhat: Callable = 0.0
    h: float = 1.0
    hhat: float = 0.0
    sigma: float = 0.0
    horizon: float = 1.0
    mean0: float = 0.0

    def __post_init__(self):
        for name in ("c", "p", "q", "n", "m", "mhat"):
            setattr(self, name, _as_fn(getattr(self, name)))
        self.h, self.hhat = float(self.h), float(self.hhat)

    @classmethod
    def from_cost(cls, cost, mean0: float) -> "LQParams":
        """Read the coefficients stored by :func:`lq_model`."""
        pr = cost.params
        return cls(pr["c"], pr["p"], pr["q"], pr["n"], pr["m"], pr["mhat"], pr["h"],
                   pr["hhat"], pr["sigma"], pr["horizon"], mean0)

    @property
    def coupled(self) -> bool:
        ts = np.linspace(0.0, self.horizon, 11)
        return self.hhat != 0 or any(self.mhat(t) != 0 for t in ts)


@dataclass
class RiccatiSolution:
    times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    iterations: int
    residual: float

    def feedback(self, k: int, x, params: LQParams):
        t = self.times[k]
        return -(params.q(t) / params.n(t)) * (self.A[k] * np.asarray(x) + self.B[k])

    def to_csv(self) -> str:
        lines = ["t,A,B,C,mean"]
        for row in zip(self.times, self.A, self.B, self.C, self.mean):
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _rk4(rhs, y_end, ts, backward):
    """Classical RK4 on the nodes ``ts``; ``rhs(t, y)`` may interpolate."""
    n = ts.size
    y = np.empty((n,) + np.shape(y_end))
    if backward:
        y[-1] = y_end
        order = range(n - 1, 0, -1)
        step = lambda k: (k, k - 1)
    else:
        y[0] = y_end
        order = range(n - 1)
        step = lambda k: (k, k + 1)
    for k in order:
        a, b = step(k)
        h = ts[b] - ts[a]
        t0, y0 = ts[a], y[a]
        k1 = rhs(t0, y0)
        k2 = rhs(t0 + h / 2, y0 + h / 2 * k1)
        k3 = rhs(t0 + h / 2, y0 + h / 2 * k2)
        k4 = rhs(t0 + h, y0 + h * k3)
        y[b] = y0 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _backward(params: LQParams, ts, mbar):
    """Solve for (A, B, C) given the mean flow sampled on ``ts``."""
    P = params
    mb = lambda t: np.interp(t, ts, mbar)
    s2 = P.sigma ** 2

    def rhs(t, y):
        A, B, C = y
        r = P.q(t) ** 2 / P.n(t)
        dA = -(2 * P.p(t) * A - r * A ** 2 + P.m(t) ** 2)
        dB = -((P.p(t) - r * A) * B + A * P.c(t) + P.m(t) * P.mhat(t) * mb(t))
        dC = -(P.c(t) * B - 0.5 * r * B ** 2 + 0.5 * P.mhat(t) ** 2 * mb(t) ** 2 + 0.5 * s2 * A)
        return np.array([dA, dB, dC])

    mT = mbar[-1]
    end = np.array([P.h ** 2, P.h * P.hhat * mT, 0.5 * P.hhat ** 2 * mT ** 2])
    y = _rk4(rhs, end, ts, backward=True)
    return y[:, 0], y[:, 1], y[:, 2]


def _forward(params: LQParams, ts, A, B):
    P = params
    Ai = lambda t: np.interp(t, ts, A)
    Bi = lambda t: np.interp(t, ts, B)
    s2 = P.sigma ** 2

    def rhs(t, y):
        mean, var = y
        r = P.q(t) ** 2 / P.n(t)
        return np.array([P.c(t) + P.p(t) * mean - r * (Ai(t) * mean + Bi(t)),
                         2 * (P.p(t) - r * Ai(t)) * var + s2])

    y = _rk4(rhs, np.array([P.mean0, 0.0]), ts, backward=False)
    return y[:, 0], y[:, 1]


def solve_riccati(params: LQParams, times: TimeGrid, tol: float = 1e-12,
                  max_iter: int = 500, damping: float = 0.5) -> RiccatiSolution:
    """Coupled Riccati system with a consistent mean flow on ``times``."""
    ts = times.times
    mbar = np.full(ts.size, params.mean0)
    if not params.coupled:
        A, B, C = _backward(params, ts, mbar)
        mean, var = _forward(params, ts, A, B)
        return RiccatiSolution(ts, A, B, C, mean, var, 1, 0.0)
    res = np.inf
    for it in range(1, max_iter + 1):
        A, B, C = _backward(params, ts, mbar)
        mean, var = _forward(params, ts, A, B)
        res = float(np.max(np.abs(mean - mbar)))
        if res <= tol:
            break
        mbar = (1 - damping) * mbar + damping * mean
    A, B, C = _backward(params, ts, mean)
    return RiccatiSolution(ts, A, B, C, mean, var, it, res)


def shooting_mean_flow(params: LQParams, times: TimeGrid, rtol: float = 1e-11,
                       atol: float = 1e-12) -> np.ndarray:
    """Independent mean flow by shooting on ``B(0)``.

    ``A`` is integrated backward with an adaptive solver.  The forward
    system in ``(B, mbar)`` is affine in the unknown ``B(0)``, so two shots
    determine the value matching ``B(T) = h hhat mbar(T)``.
    """
    P = params
    T = P.horizon
    solA = solve_ivp(lambda t, A: -(2 * P.p(t) * A - P.q(t) ** 2 / P.n(t) * A ** 2 + P.m(t) ** 2),
                     (T, 0.0), [P.h ** 2], dense_output=True, rtol=rtol, atol=atol)
    Af = lambda t: solA.sol(t)[0]

    def rhs(t, y):
        B, mb = y
        r = P.q(t) ** 2 / P.n(t)
        A = Af(t)
        return [-((P.p(t) - r * A) * B + A * P.c(t) + P.m(t) * P.mhat(t) * mb),
                P.c(t) + P.p(t) * mb - r * (A * mb + B)]

    def shoot(b0):
        return solve_ivp(rhs, (0.0, T), [b0, P.mean0], t_eval=times.times,
                         rtol=rtol, atol=atol)

    def mismatch(sol):
        return sol.y[0, -1] - P.h * P.hhat * sol.y[1, -1]

    s0, s1 = shoot(0.0), shoot(1.0)
    e0, e1 = mismatch(s0), mismatch(s1)
    b0 = -e0 / (e1 - e0)
    return shoot(b0).y[1]


def mean_error(flow: MeasureFlow, oracle: RiccatiSolution) -> float:
    """Sup over time nodes of |grid mean - oracle mean|."""
    return float(np.max(np.abs(flow.means() - oracle.mean)))


def clipping_margin(oracle: RiccatiSolution, params: LQParams, grid_lo: float, grid_hi: float,
                    control_lo: float, control_hi: float, width: float = 5.0):
    """Check that the oracle's feedback over ``mean +- width*sd`` stays inside
    the control interval and that the band stays inside the state grid.

    Returns ``(inactive, worst_control, band)``.
    """
    sd = np.sqrt(np.maximum(oracle.var, 0.0))
    lo, hi = oracle.mean - width * sd, oracle.mean + width * sd
    worst = 0.0
    for k in range(oracle.times.size):
        a = oracle.feedback(k, np.array([lo[k], hi[k]]), params)
        worst = max(worst, float(np.max(np.abs(a))))
        amin, amax = float(a.min()), float(a.max())
        if amin < control_lo or amax > control_hi:
            return False, worst, (float(lo.min()), float(hi.max()))
    band = (float(lo.min()), float(hi.max()))
    inside = band[0] >= grid_lo and band[1] <= grid_hi
    return inside, worst, band


@dataclass
class GridComparison:
    mean_error: float
    value_error: float
    band: tuple


def compare_to_grid(oracle: RiccatiSolution, flow: MeasureFlow, value=None,
                    width: float = 5.0) -> GridComparison:
    """Sup-over-time mean error and, if a grid value function is given, the
    largest |V_grid - (A x^2/2 + B x + C)| over the nodes within
    ``mean +- width * sd`` of the oracle law."""
    err = mean_error(flow, oracle)
    sd = np.sqrt(np.maximum(oracle.var, 0.0))
    band = (float(np.min(oracle.mean - width * sd)), float(np.max(oracle.mean + width * sd)))
    verr = float("nan")
    if value is not None:
        x = flow.grid.points
        verr = 0.0
        for k in range(oracle.times.size):
            inside = np.abs(x - oracle.mean[k]) <= width * sd[k] + flow.grid.dx
            quad = 0.5 * oracle.A[k] * x ** 2 + oracle.B[k] * x + oracle.C[k]
            if inside.any():
                verr = max(verr, float(np.max(np.abs(value.values[k, inside] - quad[inside]))))
    return GridComparison(err, verr, band)


def riccati_from_csv(text: str) -> dict:
    """Parse the ``t,A,B,C,mean`` export into arrays."""
    lines = text.strip().splitlines()
    if lines[0] != "t,A,B,C,mean":
        raise ValueError("not a Riccati CSV")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return {k: data[:, j] for j, k in enumerate(("t", "A", "B", "C", "mean"))}
