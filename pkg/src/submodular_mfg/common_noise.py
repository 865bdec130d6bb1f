"""Mean field game with common noise, interacting through conditional means.

The common Brownian motion is replaced by a recombining binomial tree: each
tree step spans ``N / depth`` steps of the state chain and, at its end,
shifts the state by ``+-sigma0 sqrt(dt_B)`` with probability one half each.
The shift is spread onto the grid by linear interpolation.  Conditioning on
the common noise is approximated by conditioning on the current tree node.

A :class:`ConditionalFlow` holds one real number per tree node: the
population mean conditional on that node, at the node's time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb
from typing import List, Optional

import numpy as np

from .chain import (
    CFLError,
    InstanceTooLarge,
    TieBreak,
    _expect_next,
    enumerate_optimal,
    fold_boundaries,
    select_control,
    upwind_rows,
)
from .mfg import DEFAULT_MAX_ITER, DEFAULT_TOL, MonotonicityError
from .model import MFGProblem

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-12


class ScenarioTree:
    """Recombining binomial tree; level ``l`` has nodes ``0..l``."""

    def __init__(self, depth: int, sigma0: float, horizon: float):
        if depth < 1:
            raise ValueError("tree depth must be at least 1")
        if sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        self.depth = int(depth)
        self.sigma0 = float(sigma0)
        self.horizon = float(horizon)
        self.dt = self.horizon / self.depth
        self.increment = self.sigma0 * np.sqrt(self.dt)

    def b_values(self, level: int) -> np.ndarray:
        return self.increment * (2 * np.arange(level + 1) - level)

    def probs(self, level: int) -> np.ndarray:
        return np.array([comb(level, n) for n in range(level + 1)], dtype=float) / 2.0 ** level

    def time(self, level: int) -> float:
        return level * self.dt

    def __repr__(self):
        return f"ScenarioTree(depth={self.depth}, sigma0={self.sigma0:g})"


class ConditionalFlow:
    """Conditional mean per tree node, stored as one array per level."""

    def __init__(self, tree: ScenarioTree, values):
        vals = [np.array(v, dtype=float).reshape(-1) for v in values]
        if len(vals) != tree.depth + 1 or any(v.size != l + 1 for l, v in enumerate(vals)):
            raise ValueError("conditional flow does not match the tree")
        self.tree = tree
        self.values = vals

    @classmethod
    def constant_levels(cls, tree, level_values):
        return cls(tree, [np.full(l + 1, level_values[l]) for l in range(tree.depth + 1)])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.values)

    def __getitem__(self, level):
        return self.values[level]

    @classmethod
    def from_csv(cls, text: str, tree: ScenarioTree) -> "ConditionalFlow":
        lines = text.strip().splitlines()
        if lines[0] != "level,node,B_value,prob,mu":
            raise ValueError("not a conditional-flow CSV")
        vals = [np.zeros(l + 1) for l in range(tree.depth + 1)]
        for ln in lines[1:]:
            l, n, _, _, mu = ln.split(",")
            vals[int(l)][int(n)] = float(mu)
        return cls(tree, vals)

    def to_csv(self) -> str:
        lines = ["level,node,B_value,prob,mu"]
        for l, v in enumerate(self.values):
            bs, ps = self.tree.b_values(l), self.tree.probs(l)
            for n in range(l + 1):
                lines.append(f"{l},{n},{float(bs[n])!r},{float(ps[n])!r},{float(v[n])!r}")
        return "\n".join(lines) + "\n"


def cflow_leq(a: ConditionalFlow, b: ConditionalFlow, tol: float = MONOTONE_TOL) -> bool:
    return bool(np.all(a.flat() <= b.flat() + tol))


def cflow_distance(a: ConditionalFlow, b: ConditionalFlow) -> float:
    return float(np.max(np.abs(a.flat() - b.flat())))


def cflow_meet(a, b):
    return ConditionalFlow(a.tree, [np.minimum(x, y) for x, y in zip(a.values, b.values)])


def cflow_join(a, b):
    return ConditionalFlow(a.tree, [np.maximum(x, y) for x, y in zip(a.values, b.values)])


def shift_matrix(points: np.ndarray, d: float) -> np.ndarray:
    """Row ``i`` spreads a unit mass at ``x_i + d`` onto its two neighbouring
    grid nodes by linear interpolation; targets outside the grid are clipped."""
    M = points.size
    dx = points[1] - points[0]
    y = np.clip(points + d, points[0], points[-1])
    pos = (y - points[0]) / dx
    near = np.rint(pos)
    pos = np.where(np.abs(pos - near) <= 1e-9, near, pos)
    j = np.clip(np.floor(pos).astype(int), 0, M - 2)
    frac = np.clip(pos - j, 0.0, 1.0)
    S = np.zeros((M, M))
    S[np.arange(M), j] = 1.0 - frac
    S[np.arange(M), j + 1] += frac
    return S


class CommonNoiseGame:
    """A grid problem plus a scenario tree aligned with its time grid."""

    def __init__(self, problem: MFGProblem, tree: ScenarioTree):
        if problem.dynamics.geometric:
            raise ValueError("common noise needs bounded drift; geometric dynamics are rejected")
        if not problem.cost.mean_coupled:
            raise ValueError("common noise needs a cost depending on the measure through its mean")
        N = problem.times.steps
        if N % tree.depth:
            raise ValueError(f"tree depth {tree.depth} must divide the number of steps {N}")
        if abs(tree.horizon - problem.times.horizon) > 1e-12:
            raise ValueError("tree and time grid have different horizons")
        self.problem = problem
        self.tree = tree
        self.steps_per_level = N // tree.depth
        pts = problem.grid.points
        self.shift_down = shift_matrix(pts, -tree.increment)
        self.shift_up = shift_matrix(pts, tree.increment)
        self.cfl_number = 0.0

    def level(self, k: int) -> int:
        return k // self.steps_per_level

    def branches_after(self, k: int) -> bool:
        return (k + 1) % self.steps_per_level == 0

    def rows(self, k: int, mean: float):
        """Folded ``(down, stay, up)`` and drift for one tree node."""
        p = self.problem
        dyn = p.dynamics
        x = p.grid.points[:, None]
        a = p.controls.values[None, :]
        shift = dyn.shift(mean) if dyn.mean_field else 0.0
        b = np.broadcast_to(dyn.drift(p.times.times[k], x, a, shift), (x.size, a.size))
        vol = dyn.local_vol(p.grid.points)[:, None]
        dx, dt = p.grid.dx, p.times.dt
        rate = float(np.max(vol ** 2 / dx ** 2 + np.abs(b) / dx))
        self.cfl_number = max(self.cfl_number, rate * dt)
        if rate * dt > 1.0 + 1e-12:
            raise CFLError(f"CFL violated: dt={dt:.6g} but dt <= {1 / rate:.6g} is required",
                           1.0 / rate)
        d, s, u = upwind_rows(b, vol, dx, dt)
        d, s, u = fold_boundaries(np.array(d), np.array(s), np.array(u))
        return d, s, u, np.array(b)

    def drift_sup(self) -> float:
        """Sup of |b| over the grid, controls, times and admissible shifts."""
        p = self.problem
        dyn = p.dynamics
        x = p.grid.points[:, None]
        a = p.controls.values[None, :]
        bound = getattr(dyn, "m_bound", 0.0)
        worst = 0.0
        for t in p.times.times:
            for s in ((-bound, bound) if dyn.mean_field else (0.0,)):
                worst = max(worst, float(np.max(np.abs(dyn.drift(t, x, a, s)))))
        return worst

    def envelope(self) -> List[np.ndarray]:
        """Bound ``Y`` on ``|conditional mean|`` per node:
        ``E|xi| + t |b|_inf + sqrt((sigma^2 + dx |b|_inf) t) + sigma0 |B|``,
        capped by the largest ``|x|`` on the grid."""
        p = self.problem
        e0 = p.initial.expect(np.abs)
        bsup = self.drift_sup()
        cap = float(np.max(np.abs(p.grid.points)))
        out = []
        for l in range(self.tree.depth + 1):
            t = self.tree.time(l)
            y = (e0 + t * bsup + np.sqrt((p.dynamics.sigma ** 2 + p.grid.dx * bsup) * t)
                 + np.abs(self.tree.b_values(l)))
            out.append(np.minimum(y, cap))
        return out

    def extremal_flows(self):
        env = self.envelope()
        m0 = self.problem.initial.mean()
        lo = [-y for y in env]
        hi = [y.copy() for y in env]
        lo[0][:] = m0
        hi[0][:] = m0
        return ConditionalFlow(self.tree, lo), ConditionalFlow(self.tree, hi)


@dataclass
class CNBestResponse:
    flow: ConditionalFlow
    values: list        # per time node k: (nodes, M)
    policies: list      # per time node k < N: (nodes, M) control indices
    masses: list        # per time node k: (nodes, M) joint node/state masses
    tower_gap: float


def _continuation(game: CommonNoiseGame, k: int, Vnext: np.ndarray) -> np.ndarray:
    """Value after the state move, before it, per current node."""
    if not game.branches_after(k):
        return Vnext
    L = game.level(k)
    down = Vnext[: L + 1] @ game.shift_down.T
    up = Vnext[1: L + 2] @ game.shift_up.T
    return 0.5 * down + 0.5 * up


def _node_means(game: CommonNoiseGame, mass: np.ndarray) -> np.ndarray:
    x = game.problem.grid.points
    tot = mass.sum(axis=1)
    return (mass @ x) / np.where(tot > 0, tot, 1.0)


def _assemble(game: CommonNoiseGame, masses) -> tuple:
    s = game.steps_per_level
    x = game.problem.grid.points
    vals, gap = [], 0.0
    for l in range(game.tree.depth + 1):
        m = masses[l * s]
        means = _node_means(game, m)
        vals.append(means)
        probs = game.tree.probs(l)
        gap = max(gap, abs(float(probs @ means) - float(m.sum(axis=0) @ x)))
    return ConditionalFlow(game.tree, vals), gap


def _node_flow_mean(game, mu: ConditionalFlow, k: int) -> np.ndarray:
    return mu[game.level(k)]


def cn_best_response(game: CommonNoiseGame, mu: ConditionalFlow,
                     tie_break: TieBreak = TieBreak.LOWEST) -> CNBestResponse:
    """Best response on the augmented (tree node, state) chain against the
    conditional means ``mu``; returns the conditional means of its law."""
    p = game.problem
    x = p.grid.points
    ctrl = p.controls.values
    N, dt = p.times.steps, p.times.dt
    cost = p.cost
    D = game.tree.depth
    rows = [[game.rows(k, m) for m in _node_flow_mean(game, mu, k)] for k in range(N)]

    V = [None] * (N + 1)
    pol = [None] * N
    V[N] = np.stack([cost.g_mean(x, m) * np.ones_like(x) for m in mu[D]])
    for k in range(N - 1, -1, -1):
        W = _continuation(game, k, V[k + 1])
        t = p.times.times[k]
        Vk, Pk = [], []
        for n, m in enumerate(_node_flow_mean(game, mu, k)):
            d, s, u, b = rows[k][n]
            run = (np.asarray(cost.f_mean(t, x, m), dtype=float)[:, None] * np.ones((1, ctrl.size))
                   + cost.l(t, x[:, None], ctrl[None, :])) * dt
            q = run + _expect_next(W[n], d, s, u)
            v, idx = select_control(q, b, tie_break)
            Vk.append(v)
            Pk.append(idx)
        V[k], pol[k] = np.stack(Vk), np.stack(Pk)

    masses = cn_push_forward(game, rows, pol)
    flow, gap = _assemble(game, masses)
    return CNBestResponse(flow, V, pol, masses, gap)


def cn_push_forward(game: CommonNoiseGame, rows, pol) -> list:
    p = game.problem
    M, N = p.grid.size, p.times.steps
    idx = np.arange(M)
    masses = [p.initial.weights[None, :].copy()]
    for k in range(N):
        cur = masses[k]
        moved = np.zeros_like(cur)
        for n in range(cur.shape[0]):
            d, s, u, _ = rows[k][n]
            c = pol[k][n]
            w = cur[n]
            nxt = s[idx, c] * w
            nxt[:-1] += d[idx, c][1:] * w[1:]
            nxt[1:] += u[idx, c][:-1] * w[:-1]
            moved[n] = nxt
        if game.branches_after(k):
            out = np.zeros((cur.shape[0] + 1, M))
            out[:-1] += 0.5 * moved @ game.shift_down
            out[1:] += 0.5 * moved @ game.shift_up
            moved = out
        masses.append(moved)
    return masses


# -- brute-force oracle ---------------------------------------------------------

def augmented_mdp(game: CommonNoiseGame, mu: ConditionalFlow):
    """Dense augmented MDP (states ``node * M + i``) for the enumeration oracle."""
    p = game.problem
    x = p.grid.points
    ctrl = p.controls.values
    M, K, N, dt = p.grid.size, ctrl.size, p.times.steps, p.times.dt
    costs, trans, drifts = [], [], []
    for k in range(N):
        nodes = game.level(k) + 1
        nodes_next = game.level(k + 1) + 1
        branch = game.branches_after(k)
        C = np.zeros((nodes * M, K))
        P = np.zeros((nodes * M, K, nodes_next * M))
        B = np.zeros((nodes * M, K))
        t = p.times.times[k]
        for n, m in enumerate(_node_flow_mean(game, mu, k)):
            d, s, u, b = game.rows(k, m)
            sl = slice(n * M, (n + 1) * M)
            C[sl] = (np.asarray(p.cost.f_mean(t, x, m), dtype=float)[:, None]
                     + p.cost.l(t, x[:, None], ctrl[None, :])) * dt
            B[sl] = b
            for i in range(M):
                step = np.zeros((K, M))
                step[:, i] += s[i]
                if i > 0:
                    step[:, i - 1] += d[i]
                if i < M - 1:
                    step[:, i + 1] += u[i]
                if branch:
                    P[n * M + i, :, n * M:(n + 1) * M] += 0.5 * step @ game.shift_down
                    P[n * M + i, :, (n + 1) * M:(n + 2) * M] += 0.5 * step @ game.shift_up
                else:
                    P[n * M + i, :, n * M:(n + 1) * M] += step
        costs.append(C)
        trans.append(P)
        drifts.append(B)
    term = np.concatenate([p.cost.g_mean(x, m) * np.ones_like(x) for m in mu[game.tree.depth]])
    return costs, trans, term, drifts


def cn_brute_force_best_response(game: CommonNoiseGame, mu: ConditionalFlow,
                                 tie_break: TieBreak = TieBreak.LOWEST) -> CNBestResponse:
    """Exhaustive-enumeration counterpart of :func:`cn_best_response`."""
    p = game.problem
    M, N = p.grid.size, p.times.steps
    if N > 3 or M > 5 or p.controls.size > 3:
        raise InstanceTooLarge("brute force is limited to N <= 3, M <= 5, K <= 3")
    costs, trans, term, drifts = augmented_mdp(game, mu)
    values, policy = enumerate_optimal(costs, trans, term, drifts, tie_break)
    V = [v.reshape(-1, M) for v in values]
    pol = [q.reshape(-1, M) for q in policy]
    # forward push through the dense kernels
    masses = [p.initial.weights[None, :].copy()]
    for k in range(N):
        w = masses[k].reshape(-1)
        P = trans[k][np.arange(w.size), policy[k]]
        masses.append((w @ P).reshape(-1, M))
    flow, gap = _assemble(game, masses)
    return CNBestResponse(flow, V, pol, masses, gap)


# -- learning --------------------------------------------------------------------

@dataclass
class CNTrace:
    residuals: List[float] = field(default_factory=list)
    monotone: List[bool] = field(default_factory=list)
    tower_gaps: List[float] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["iter,residual,monotone,tower_gap"]
        for n, (r, m, g) in enumerate(zip(self.residuals, self.monotone, self.tower_gaps)):
            lines.append(f"{n},{r!r},{int(m)},{g!r}")
        return "\n".join(lines) + "\n"


@dataclass
class CNSolution:
    flow: ConditionalFlow
    response: CNBestResponse
    residual: float
    converged: bool
    iterations: int
    kind: str


def _cn_iterate(game, start, tie_break, direction, tol, max_iter, kind):
    trace = CNTrace()
    mu = start
    for n in range(max_iter):
        br = cn_best_response(game, mu, tie_break)
        nxt = br.flow
        ok = cflow_leq(mu, nxt) if direction > 0 else cflow_leq(nxt, mu)
        res = cflow_distance(mu, nxt)
        trace.residuals.append(res)
        trace.monotone.append(ok)
        trace.tower_gaps.append(br.tower_gap)
        if not ok:
            diff = direction * (mu.flat() - nxt.flat())
            raise MonotonicityError(
                f"conditional iterate {n + 1} breaks the order by {float(diff.max()):.3e}")
        if res <= tol:
            return CNSolution(mu, br, res, True, n + 1, kind), trace
        mu = nxt
    br = cn_best_response(game, mu, tie_break)
    res = cflow_distance(mu, br.flow)
    log.warning("common-noise learning stopped after %d iterations, residual %.3e", max_iter, res)
    return CNSolution(mu, br, res, res <= tol, max_iter, kind), trace


def cn_learn_from_below(game: CommonNoiseGame, tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER):
    lo, _ = game.extremal_flows()
    return _cn_iterate(game, lo, TieBreak.LOWEST, +1, tol, max_iter, "minimal")


def cn_learn_from_above(game: CommonNoiseGame, tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER):
    _, hi = game.extremal_flows()
    return _cn_iterate(game, hi, TieBreak.HIGHEST, -1, tol, max_iter, "maximal")


def max_gap_to_flow_means(sol: CNSolution, means: np.ndarray, steps_per_level: int) -> float:
    """Largest |conditional mean - reference mean| over all nodes, with the
    reference read at each level's time node."""
    gap = 0.0
    for l, v in enumerate(sol.flow.values):
        gap = max(gap, float(np.max(np.abs(v - means[l * steps_per_level]))))
    return gap
