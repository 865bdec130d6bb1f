"""Monotone learning procedures for the mean field game.

Starting from the smallest (largest) feasible flow the best-response map is
iterated; for submodular costs the iterates increase (decrease) and settle
on the minimal (maximal) equilibrium.  Monotonicity is checked at every step
and a violation is treated as a hard error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .chain import (
    BestResponse,
    Policy,
    TieBreak,
    ValueFunction,
    best_response,
    build_chain,
    push_forward,
)
from .measures import (
    CDF_TOL,
    DiscreteMeasure,
    MeasureFlow,
    envelope_bounds,
    flow_distance,
    flow_join,
    flow_leq,
    flow_meet,
)
from .model import MFGProblem

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


class MonotonicityError(RuntimeError):
    """Iterates of an extremal learning run lost their order."""


class Kind(str, Enum):
    MINIMAL = "minimal"
    MAXIMAL = "maximal"
    INTERIOR = "interior"


@dataclass
class IterationTrace:
    flows: List[MeasureFlow] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    monotone: List[bool] = field(default_factory=list)
    costs: List[float] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["iter,residual,monotone,cost"]
        for n, (r, m, c) in enumerate(zip(self.residuals, self.monotone, self.costs)):
            lines.append(f"{n},{r!r},{int(m)},{c!r}")
        return "\n".join(lines) + "\n"


@dataclass
class MfgSolution:
    flow: MeasureFlow
    policy: Policy
    value: ValueFunction
    residual: float
    kind: Kind
    converged: bool
    iterations: int


# -- feasible flows --------------------------------------------------------------

def second_moment(s):
    return np.asarray(s, dtype=float) ** 2


def moment_bound(problem: MFGProblem) -> float:
    """Upper bound ``C`` on ``E[X_k^2]`` over every policy and time node.

    When the grid contains the origin the chain satisfies, per step,
    ``E X'^2 <= E X^2 + 2 E|X||b| dt + (sigma^2 + dx E|b|) dt`` with
    ``|b| <= beta0 + beta1 |x|``; iterating it gives ``C``.  Otherwise (and
    for geometric dynamics) the trivial bound ``max x^2`` on the grid is used.
    """
    if problem.moment_bound is not None:
        return float(problem.moment_bound)
    xs = problem.grid.points
    trivial = float(np.max(xs ** 2))
    dyn = problem.dynamics
    if dyn.geometric or xs[0] > 0 or xs[-1] < 0 or not hasattr(dyn, "drift_bound_coeffs"):
        return trivial
    b0, b1 = dyn.drift_bound_coeffs(problem.times.times, problem.controls)
    dt, dx, sig2 = problem.times.dt, problem.grid.dx, dyn.sigma ** 2
    s2 = problem.initial.expect(second_moment)
    best = s2
    for _ in range(problem.times.steps):
        s = np.sqrt(s2)
        s2 = s2 + 2 * (b0 * s + b1 * s2) * dt + (sig2 + dx * (b0 + b1 * s)) * dt
        best = max(best, s2)
    return min(best, trivial)


def extremal_flows(problem: MFGProblem):
    """``(inf L, sup L)``: the initial law at t_0, envelope measures after."""
    cached = problem._cache.get("extremal")
    if cached is not None:
        return cached
    C = moment_bound(problem)
    lo, hi = envelope_bounds(C, second_moment, problem.grid)
    out = (MeasureFlow.constant(problem.initial, lo, problem.times.steps),
           MeasureFlow.constant(problem.initial, hi, problem.times.steps))
    problem._cache["extremal"] = out
    return out


# -- learning ------------------------------------------------------------------------

def _initial_cost(br: BestResponse, problem: MFGProblem) -> float:
    return float(br.value.values[0] @ problem.initial.weights)


def _iterate(problem, start, tie_break, direction, tol, max_iter, kind, trace=None,
             first=None):
    """Monotone iteration ``mu <- R(mu)``.  ``direction`` is +1 (increasing)
    or -1 (decreasing)."""
    trace = trace or IterationTrace()
    mu = start
    if not trace.flows:
        trace.flows.append(mu)
    br = first
    for n in range(max_iter):
        if br is None:
            br = best_response(problem, mu, tie_break)
        nxt = br.flow
        ok = flow_leq(mu, nxt) if direction > 0 else flow_leq(nxt, mu)
        res = flow_distance(mu, nxt)
        trace.flows.append(nxt)
        trace.residuals.append(res)
        trace.monotone.append(ok)
        trace.costs.append(_initial_cost(br, problem))
        if not ok:
            raise MonotonicityError(
                f"iterate {n + 1} is not {'above' if direction > 0 else 'below'} iterate {n} "
                f"(max CDF gap {float(np.max(direction * (nxt.cdf - mu.cdf))):.3e})")
        if res <= tol:
            return MfgSolution(mu, br.policy, br.value, res, kind, True, n + 1), trace
        mu, br = nxt, None
    br = best_response(problem, mu, tie_break)
    res = flow_distance(mu, br.flow)
    log.warning("learning stopped after %d iterations with residual %.3e", max_iter, res)
    return MfgSolution(mu, br.policy, br.value, res, kind, res <= tol, max_iter), trace


def learn_from_below(problem: MFGProblem, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER):
    """Iterate the best response from ``inf L``; returns ``(solution, trace)``."""
    lo, _ = extremal_flows(problem)
    return _iterate(problem, lo, TieBreak.LOWEST, +1, tol, max_iter, Kind.MINIMAL)


def learn_from_above(problem: MFGProblem, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER):
    """Iterate the best response from ``sup L``; returns ``(solution, trace)``."""
    _, hi = extremal_flows(problem)
    return _iterate(problem, hi, TieBreak.HIGHEST, -1, tol, max_iter, Kind.MAXIMAL)


@dataclass
class LearnResult:
    solution: Optional[MfgSolution]
    trace: IterationTrace
    warning: Optional[str] = None
    pair: Optional[tuple] = None


def learn_from(problem: MFGProblem, mu0: MeasureFlow, tie_break: TieBreak = TieBreak.LOWEST,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> LearnResult:
    """Learning from an arbitrary flow.

    Proceeds only if ``mu0`` and ``R(mu0)`` are comparable; otherwise the
    non-comparable pair is returned with a warning and no solution.
    """
    br = best_response(problem, mu0, tie_break)
    if flow_leq(mu0, br.flow):
        direction = +1
    elif flow_leq(br.flow, mu0):
        direction = -1
    else:
        msg = "first two iterates are not comparable; no convergence claim"
        return LearnResult(None, IterationTrace(flows=[mu0, br.flow]), msg, (mu0, br.flow))
    sol, trace = _iterate(problem, mu0, tie_break, direction, tol, max_iter, Kind.INTERIOR,
                          first=br)
    return LearnResult(sol, trace)


def residual(problem: MFGProblem, flow: MeasureFlow,
             tie_break: TieBreak = TieBreak.LOWEST) -> float:
    """Sup-over-time Kolmogorov distance between ``flow`` and ``R(flow)``."""
    return flow_distance(flow, best_response(problem, flow, tie_break).flow)


def expected_cost(problem: MFGProblem, policy: Policy, flow: MeasureFlow) -> float:
    """Cost of ``policy`` against ``flow``, computed exactly on the chain by
    integrating the running and terminal costs against the pushed laws."""
    chain = build_chain(problem, flow)
    nu = push_forward(chain, policy, problem.initial)
    x = problem.grid.points
    dt = problem.times.dt
    total = 0.0
    rows = np.arange(x.size)
    for k in range(problem.times.steps):
        run = problem.cost.running(problem.times.times[k], x, flow[k], problem.controls.values)
        total += float(nu.weights[k] @ run[rows, policy.indices[k]]) * dt
    total += float(nu.weights[-1] @ problem.cost.terminal(x, flow[-1]))
    return total


# -- verification -------------------------------------------------------------------

def random_flow(problem: MFGProblem, rng: np.random.Generator) -> MeasureFlow:
    """A random flow with the initial law at t_0 and lumpy random laws after."""
    M, N = problem.grid.size, problem.times.steps
    xs = problem.grid.points
    w = np.empty((N + 1, M))
    w[0] = problem.initial.weights
    span = xs[-1] - xs[0]
    for k in range(1, N + 1):
        centre = xs[0] + span * rng.uniform(0.2, 0.8)
        width = span * rng.uniform(0.02, 0.3)
        bump = np.exp(-0.5 * ((xs - centre) / width) ** 2)
        w[k] = bump * rng.uniform(0.2, 1.0, size=M) + 1e-12
    return MeasureFlow(problem.grid, w)


@dataclass
class MonotonicityReport:
    pairs: int
    violations: int
    witnesses: list

    @property
    def passed(self) -> bool:
        return self.violations == 0


def verify_monotone_R(problem: MFGProblem, n_pairs: int = 50, seed: int = 0,
                      tie_break: TieBreak = TieBreak.LOWEST) -> MonotonicityReport:
    """Check ``R(mu) <=L R(mubar)`` on random ordered pairs ``mu <=L mubar``
    built as meet and join of two random flows."""
    rng = np.random.default_rng(seed)
    witnesses = []
    for j in range(n_pairs):
        a, b = random_flow(problem, rng), random_flow(problem, rng)
        lo, hi = flow_meet(a, b), flow_join(a, b)
        r_lo = best_response(problem, lo, tie_break).flow
        r_hi = best_response(problem, hi, tie_break).flow
        if not flow_leq(r_lo, r_hi):
            gap = r_hi.cdf - r_lo.cdf
            k, i = np.unravel_index(int(np.argmax(gap)), gap.shape)
            witnesses.append({"pair": j, "time_index": int(k), "state_index": int(i),
                              "cdf_gap": float(gap[k, i])})
    return MonotonicityReport(n_pairs, len(witnesses), witnesses)


@dataclass
class LatticeProbe:
    ordered: bool
    meet_residual: float
    join_residual: float
    distance: float


def lattice_probe(sol_a: MfgSolution, sol_b: MfgSolution, problem: MFGProblem) -> LatticeProbe:
    """Order between two solutions and the residuals of their pointwise
    meet and join (which need not be solutions themselves)."""
    ordered = flow_leq(sol_a.flow, sol_b.flow) or flow_leq(sol_b.flow, sol_a.flow)
    m = flow_meet(sol_a.flow, sol_b.flow)
    j = flow_join(sol_a.flow, sol_b.flow)
    return LatticeProbe(ordered, residual(problem, m, TieBreak.LOWEST),
                        residual(problem, j, TieBreak.HIGHEST),
                        flow_distance(sol_a.flow, sol_b.flow))


def summary_lines(below: MfgSolution, above: MfgSolution, tol: float) -> str:
    same = flow_distance(below.flow, above.flow) <= tol
    items = [
        ("minimal_residual", below.residual),
        ("minimal_iterations", below.iterations),
        ("minimal_converged", below.converged),
        ("maximal_residual", above.residual),
        ("maximal_iterations", above.iterations),
        ("maximal_converged", above.converged),
        ("min_equals_max", same),
        ("minimal_terminal_mean", float(below.flow.means()[-1])),
        ("maximal_terminal_mean", float(above.flow.means()[-1])),
        ("distance_min_max", flow_distance(below.flow, above.flow)),
    ]
    return "".join(f"{k}: {v!r}\n" if isinstance(v, float) else f"{k}: {v}\n" for k, v in items)
