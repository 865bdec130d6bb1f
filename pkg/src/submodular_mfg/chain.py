"""Markov chain approximation of the controlled diffusion, backward dynamic
programming, forward propagation of laws, and an exhaustive-enumeration
oracle for tiny instances.

The chain moves at most one grid node per time step.  With drift ``b`` and
local volatility ``s`` at ``(t_k, x_i, a_u)``::

    up   = (s^2 / 2 + dx * max(b, 0)) * dt / dx^2
    down = (s^2 / 2 + dx * max(-b, 0)) * dt / dx^2
    stay = 1 - up - down

Moves that would leave the grid are folded into ``stay``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .measures import DiscreteMeasure, MeasureFlow, StateGrid, TimeGrid
from .model import ControlSet, CostModel, Dynamics, MFGProblem

TIE_TOL = 1e-12


class TieBreak(str, Enum):
    LOWEST = "lowest"
    HIGHEST = "highest"


class CFLError(ValueError):
    """The explicit chain would have negative transition probabilities."""

    def __init__(self, message, required_dt):
        super().__init__(message)
        self.required_dt = required_dt


def upwind_rows(drift, vol, dx, dt):
    """Return ``(down, stay, up)`` before boundary folding."""
    base = 0.5 * vol ** 2
    up = (base + dx * np.maximum(drift, 0.0)) * dt / dx ** 2
    down = (base + dx * np.maximum(-drift, 0.0)) * dt / dx ** 2
    return down, 1.0 - up - down, up


def fold_boundaries(down, stay, up):
    """Fold out-of-grid moves of the first/last row into ``stay`` (in place)."""
    stay[0] += down[0]
    down[0] = 0.0
    stay[-1] += up[-1]
    up[-1] = 0.0
    return down, stay, up


class MarkovChainModel:
    """Transition triples per ``(time node k < N, state i, control u)``.

    Rows are computed on demand from the drift; ``m_shifts`` holds the
    mean-field drift shift per time node for measure-dependent dynamics.
    """

    def __init__(self, dynamics: Dynamics, grid: StateGrid, times: TimeGrid,
                 controls: ControlSet, m_shifts: Optional[np.ndarray] = None):
        self.dynamics = dynamics
        self.grid = grid
        self.times = times
        self.controls = controls
        if m_shifts is None:
            m_shifts = np.zeros(times.steps)
        self.m_shifts = np.asarray(m_shifts, dtype=float)
        self._vol = dynamics.local_vol(grid.points)[:, None]
        self._check_cfl()

    def drift(self, k: int) -> np.ndarray:
        """Drift on the ``(M, K)`` state/control product at time node ``k``."""
        x = self.grid.points[:, None]
        a = self.controls.values[None, :]
        b = self.dynamics.drift(self.times.times[k], x, a, self.m_shifts[k])
        return np.broadcast_to(b, (self.grid.size, self.controls.size))

    def rows(self, k: int):
        d, s, u = upwind_rows(self.drift(k), self._vol, self.grid.dx, self.times.dt)
        return fold_boundaries(np.array(d), np.array(s), np.array(u))

    def _check_cfl(self):
        dx, dt = self.grid.dx, self.times.dt
        worst = 0.0
        for k in range(self.times.steps):
            rate = self._vol[:, 0, None] ** 2 / dx ** 2 + np.abs(self.drift(k)) / dx
            worst = max(worst, float(rate.max()))
        self.cfl_number = worst * dt
        if self.cfl_number > 1.0 + 1e-12:
            need = 1.0 / worst
            raise CFLError(f"CFL violated: dt={dt:.6g} but dt <= {need:.6g} is required", need)

    def is_monotone(self) -> bool:
        """True if every feedback kernel of the chain is stochastically
        monotone in the state (``up[i] + down[i+1] <= 1`` for all controls)."""
        for k in range(self.times.steps):
            d, _, u = self.rows(k)
            if np.any(u[:-1].max(axis=1) + d[1:].max(axis=1) > 1.0 + 1e-12):
                return False
        return True


def build_chain(problem: MFGProblem, flow: Optional[MeasureFlow] = None) -> MarkovChainModel:
    """Chain for ``problem``; measure-dependent dynamics read ``flow``."""
    dyn = problem.dynamics
    if dyn.mean_field:
        if flow is None:
            raise ValueError("mean-field dynamics need a measure flow")
        means = flow.means()
        shifts = np.array([dyn.shift(means[k]) for k in range(problem.times.steps)])
        return MarkovChainModel(dyn, problem.grid, problem.times, problem.controls, shifts)
    chain = problem._cache.get("chain")
    if chain is None:
        chain = MarkovChainModel(dyn, problem.grid, problem.times, problem.controls)
        problem._cache["chain"] = chain
    return chain


@dataclass
class ValueFunction:
    values: np.ndarray          # (N + 1, M)
    grid: StateGrid
    times: TimeGrid


@dataclass
class Policy:
    indices: np.ndarray         # (N, M) control indices
    controls: ControlSet

    @property
    def values(self) -> np.ndarray:
        return self.controls.values[self.indices]

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return np.array_equal(self.indices, other.indices)


def select_control(q: np.ndarray, drift: np.ndarray, tie_break: TieBreak):
    """Pick, per row of ``q``, a minimiser with extremal drift.

    Minimisers are the entries within ``TIE_TOL`` (relative to ``max(1, |min|)``)
    of the row minimum.  Among equal drifts the lowest (resp. highest) index
    wins.  Returns ``(row minimum, chosen index)``.
    """
    qmin = q.min(axis=1)
    mask = q <= (qmin + TIE_TOL * np.maximum(1.0, np.abs(qmin)))[:, None]
    if TieBreak(tie_break) is TieBreak.LOWEST:
        idx = np.argmin(np.where(mask, drift, np.inf), axis=1)
    else:
        rev = np.where(mask, drift, -np.inf)[:, ::-1]
        idx = q.shape[1] - 1 - np.argmax(rev, axis=1)
    return qmin, idx


def _expect_next(v, d, s, u):
    """``E[V(X_{k+1}) | X_k = x_i, u]`` for ``(M, K)`` row arrays."""
    vd = np.concatenate(([v[0]], v[:-1]))
    vu = np.concatenate((v[1:], [v[-1]]))
    return d * vd[:, None] + s * v[:, None] + u * vu[:, None]


def stage_costs(chain: MarkovChainModel, cost: CostModel, flow: MeasureFlow, k: int):
    x = chain.grid.points
    return cost.running(chain.times.times[k], x, flow[k], chain.controls.values) * chain.times.dt


def solve_best_response(chain: MarkovChainModel, cost: CostModel, flow: MeasureFlow,
                        tie_break: TieBreak = TieBreak.LOWEST):
    """Backward induction on the chain against the measure flow ``flow``."""
    N, M = chain.times.steps, chain.grid.size
    if flow.grid != chain.grid or flow.steps != N:
        raise ValueError("flow does not match the chain's grids")
    V = np.empty((N + 1, M))
    pol = np.empty((N, M), dtype=int)
    V[N] = cost.terminal(chain.grid.points, flow[N])
    for k in range(N - 1, -1, -1):
        d, s, u = chain.rows(k)
        q = stage_costs(chain, cost, flow, k) + _expect_next(V[k + 1], d, s, u)
        V[k], pol[k] = select_control(q, chain.drift(k), tie_break)
    return ValueFunction(V, chain.grid, chain.times), Policy(pol, chain.controls)


def push_forward(chain: MarkovChainModel, policy: Policy, initial: DiscreteMeasure) -> MeasureFlow:
    """Law flow of the chain started at ``initial`` and driven by ``policy``."""
    N, M = chain.times.steps, chain.grid.size
    W = np.empty((N + 1, M))
    W[0] = initial.weights
    rows = np.arange(M)
    for k in range(N):
        d, s, u = chain.rows(k)
        c = policy.indices[k]
        nu = W[k]
        nxt = s[rows, c] * nu
        nxt[:-1] += d[rows, c][1:] * nu[1:]
        nxt[1:] += u[rows, c][:-1] * nu[:-1]
        W[k + 1] = nxt
    return MeasureFlow(chain.grid, W)


@dataclass
class BestResponse:
    flow: MeasureFlow
    value: ValueFunction
    policy: Policy
    chain: MarkovChainModel


def best_response(problem: MFGProblem, flow: MeasureFlow,
                  tie_break: TieBreak = TieBreak.LOWEST) -> BestResponse:
    """The best-response map: optimal control against ``flow`` and its law."""
    chain = build_chain(problem, flow)
    value, policy = solve_best_response(chain, problem.cost, flow, tie_break)
    out = push_forward(chain, policy, problem.initial)
    return BestResponse(out, value, policy, chain)


# -- exhaustive oracle -------------------------------------------------------

ENUMERATION_LIMIT = 200_000


class InstanceTooLarge(ValueError):
    pass


def enumerate_optimal(costs, transitions, terminal, drifts, tie_break=TieBreak.LOWEST,
                      limit: int = ENUMERATION_LIMIT):
    """Optimal values and policy of a finite-horizon MDP by enumeration.

    ``costs[k]`` has shape ``(S_k, K)``, ``transitions[k]`` shape
    ``(S_k, K, S_{k+1})`` and ``terminal`` shape ``(S_N,)``.  For every
    stage the value vectors of *all* deterministic tail policies are
    enumerated; no Bellman minimisation is performed on intermediate
    stages.  ``drifts[k]`` orders tied controls.
    """
    N = len(costs)
    K = costs[0].shape[1]
    total = 1
    for k in range(1, N):
        total *= K ** costs[k].shape[0]
    if total > limit:
        raise InstanceTooLarge(f"{total} tail policies exceed the limit of {limit}")

    values = [None] * (N + 1)
    policy = [None] * N
    values[N] = np.asarray(terminal, dtype=float)
    tails = values[N][None, :]                  # all tail value vectors from stage k+1
    for k in range(N - 1, -1, -1):
        c, P = costs[k], transitions[k]
        S = c.shape[0]
        # continuation for every (state, control, tail)
        cont = np.einsum("suj,tj->sut", P, tails)
        q = c + cont.min(axis=2)
        values[k], policy[k] = select_control(q, drifts[k], tie_break)
        if k > 0:
            opts = c[:, :, None] + cont         # (S, K, T)
            new = []
            for combo in itertools.product(range(K), repeat=S):
                new.append(opts[np.arange(S), list(combo), :].T)
            tails = np.concatenate(new, axis=0)
    return values, policy


def chain_as_mdp(chain: MarkovChainModel, cost: CostModel, flow: MeasureFlow):
    """Dense stage costs, transition tensors, terminal costs and drifts."""
    N, M, K = chain.times.steps, chain.grid.size, chain.controls.size
    costs, trans, drifts = [], [], []
    for k in range(N):
        d, s, u = chain.rows(k)
        P = np.zeros((M, K, M))
        for i in range(M):
            P[i, :, i] += s[i]
            if i > 0:
                P[i, :, i - 1] += d[i]
            if i < M - 1:
                P[i, :, i + 1] += u[i]
        costs.append(stage_costs(chain, cost, flow, k))
        trans.append(P)
        drifts.append(np.array(chain.drift(k)))
    terminal = cost.terminal(chain.grid.points, flow[N])
    return costs, trans, terminal, drifts


def brute_force_best_response(chain: MarkovChainModel, cost: CostModel, flow: MeasureFlow,
                              tie_break: TieBreak = TieBreak.LOWEST):
    """Exhaustive-enumeration counterpart of :func:`solve_best_response`.

    Intended for instances with ``N <= 3``, ``M <= 5``, ``K <= 3``.
    """
    N, M, K = chain.times.steps, chain.grid.size, chain.controls.size
    if N > 3 or M > 5 or K > 3:
        raise InstanceTooLarge("brute force is limited to N <= 3, M <= 5, K <= 3")
    costs, trans, terminal, drifts = chain_as_mdp(chain, cost, flow)
    values, policy = enumerate_optimal(costs, trans, terminal, drifts, tie_break)
    return (ValueFunction(np.stack(values), chain.grid, chain.times),
            Policy(np.stack(policy), chain.controls))


# -- CSV -----------------------------------------------------------------------

VALUE_CSV_HEADER = ("k", "i", "x", "value", "control")


def value_policy_to_csv(value: ValueFunction, policy: Policy) -> str:
    lines = [",".join(VALUE_CSV_HEADER)]
    xs = value.grid.points
    N = policy.indices.shape[0]
    for k in range(N + 1):
        for i, x in enumerate(xs):
            ctrl = repr(float(policy.values[k, i])) if k < N else ""
            lines.append(f"{k},{i},{float(x)!r},{float(value.values[k, i])!r},{ctrl}")
    return "\n".join(lines) + "\n"
