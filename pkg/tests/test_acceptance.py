"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed with
output capture disabled) or directly with ``python3 tests/test_acceptance.py``.
"""

import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from conftest import CONFIGS  # noqa: E402
from submodular_mfg.chain import TieBreak, brute_force_best_response, build_chain, solve_best_response  # noqa: E402
from submodular_mfg.cli import main  # noqa: E402
from submodular_mfg.common_noise import (  # noqa: E402
    CommonNoiseGame,
    ScenarioTree,
    cflow_leq,
    cn_learn_from_above,
    cn_learn_from_below,
    max_gap_to_flow_means,
)
from submodular_mfg.config import RunConfig  # noqa: E402
from submodular_mfg.lattice_checks import run_lattice_laws  # noqa: E402
from submodular_mfg.lq import LQParams, clipping_margin, mean_error, solve_riccati  # noqa: E402
from submodular_mfg.measures import (  # noqa: E402
    DiscreteMeasure,
    StateGrid,
    TimeGrid,
    flow_join,
    flow_leq,
    flow_meet,
)
from submodular_mfg.mfg import (  # noqa: E402
    MonotonicityError,
    expected_cost,
    extremal_flows,
    learn_from,
    learn_from_above,
    learn_from_below,
    random_flow,
    verify_monotone_R,
)
from submodular_mfg.model import ControlSet, MFGProblem  # noqa: E402

CDF_TOL = 1e-12
SUBMODULAR = ["lq", "threshold", "order1"]
SHIPPED = ["reference", "lq", "decoupled", "threshold", "threshold_penalized", "order1",
           "lq_validation"]

_solved = {}


def config(name):
    return RunConfig.load(CONFIGS / f"{name}.toml")


def solved(name):
    """Minimal and maximal solutions with traces and wall time, cached per config."""
    if name not in _solved:
        cfg = config(name)
        problem = cfg.build()
        t0 = time.perf_counter()
        lo, tlo = learn_from_below(problem, cfg.solver["tol"], cfg.solver["max_iter"])
        hi, thi = learn_from_above(problem, cfg.solver["tol"], cfg.solver["max_iter"])
        _solved[name] = (problem, lo, tlo, hi, thi, time.perf_counter() - t0)
    return _solved[name]


def monotone_steps(trace, direction):
    bad = 0
    for a, b in zip(trace.flows, trace.flows[1:]):
        ok = flow_leq(a, b, CDF_TOL) if direction > 0 else flow_leq(b, a, CDF_TOL)
        bad += not ok
    return bad


# -- criteria ------------------------------------------------------------------------

def criterion_1():
    parts, ok = [], True
    for name in SUBMODULAR:
        problem, lo, tlo, hi, thi, secs = solved(name)
        shape = (problem.grid.size, problem.times.steps, problem.controls.size)
        bad = monotone_steps(tlo, +1) + monotone_steps(thi, -1)
        good = (shape == (101, 100, 11) and bad == 0 and lo.converged and hi.converged
                and max(lo.residual, hi.residual) <= 1e-8
                and max(lo.iterations, hi.iterations) <= 200 and secs < 60)
        ok &= good
        parts.append(f"{name}: violations={bad} iters={lo.iterations}/{hi.iterations} "
                     f"residual={max(lo.residual, hi.residual):.1e} time={secs:.1f}s")
    return ok, "; ".join(parts)


def interior_solutions(problem, lo, hi, seed=0, tries=8):
    """Interior fixed points from comparable starts: random flows clipped into
    the extremal band and the extremal flows learned with the opposite tie-break."""
    rng = np.random.default_rng(seed)
    f_lo, f_hi = extremal_flows(problem)
    starts = [(lo.flow, TieBreak.HIGHEST), (hi.flow, TieBreak.LOWEST)]
    for _ in range(tries):
        r = random_flow(problem, rng)
        starts.append((flow_join(flow_meet(r, f_hi), f_lo), TieBreak.LOWEST))
    found = []
    for mu0, tb in starts:
        res = learn_from(problem, mu0, tb, 1e-8, 200)
        if res.solution is not None and res.solution.converged:
            found.append(res.solution)
    return found


def criterion_2():
    parts, ok = [], True
    for name in SHIPPED:
        problem, lo, _, hi, _, _ = solved(name)
        ordered = flow_leq(lo.flow, hi.flow, CDF_TOL)
        inner = interior_solutions(problem, lo, hi)
        sandwiched = all(flow_leq(lo.flow, s.flow, CDF_TOL) and flow_leq(s.flow, hi.flow, CDF_TOL)
                         for s in inner)
        ok &= ordered and sandwiched
        parts.append(f"{name}: min<=max={ordered} interior={len(inner)} sandwiched={sandwiched}")
    return ok, "; ".join(parts)


def criterion_3():
    _, lo, _, hi, _, _ = solved("threshold")
    m_lo, m_hi = float(lo.flow.means()[-1]), float(hi.flow.means()[-1])
    half_gap = 0.5 * 1.0          # terminal targets 0 and 1
    distinct = not flow_leq(hi.flow, lo.flow, CDF_TOL)
    ok = distinct and m_lo < half_gap < m_hi
    return ok, f"terminal means below={m_lo:.4f} above={m_hi:.4f} split at {half_gap}"


def criterion_4():
    parts, ok = [], True
    for name in SUBMODULAR:
        rep = verify_monotone_R(config(name).build(), 50, seed=0)
        ok &= rep.pairs == 50 and rep.violations == 0
        parts.append(f"{name}: {rep.violations}/{rep.pairs}")
    neg = verify_monotone_R(config("negative_lq").build(), 50, seed=0)
    ok &= neg.violations >= 1
    parts.append(f"negative_lq: {neg.violations}/{neg.pairs} (needs >= 1)")
    return ok, "violations " + "; ".join(parts)


def tiny_problems(n=20, seed=5):
    """Random instances with <= 3 steps, <= 5 states and <= 3 controls built from
    the shipped costs and dynamics."""
    rng = np.random.default_rng(seed)
    bases = [config(name).build() for name in SUBMODULAR + ["negative_lq"]]
    out = []
    while len(out) < n:
        base = bases[len(out) % len(bases)]
        M, N, K = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        g = StateGrid.uniform(-1.0, 1.0, M)
        ctrl = ControlSet.uniform(-0.5, 0.5, K) if K > 1 else ControlSet([float(rng.uniform(-0.5, 0.5))])
        T = N * float(rng.uniform(0.02, 0.1)) * g.dx
        p = MFGProblem(base.dynamics, base.cost, ctrl, g, TimeGrid(T, N),
                       DiscreteMeasure(g, rng.uniform(0.1, 1.0, M)))
        out.append((p, random_flow(p, rng)))
    return out


def criterion_5():
    worst, mismatched, count = 0.0, 0, 0
    for p, flow in tiny_problems():
        chain = build_chain(p, flow)
        for tb in TieBreak:
            v1, p1 = solve_best_response(chain, p.cost, flow, tb)
            v2, p2 = brute_force_best_response(chain, p.cost, flow, tb)
            worst = max(worst, float(np.max(np.abs(v1.values - v2.values))))
            mismatched += not (p1 == p2)
        count += 1
    ok = count == 20 and worst <= 1e-12 and mismatched == 0
    return ok, f"{count} instances, max value gap={worst:.1e}, policy mismatches={mismatched}"


def criterion_6():
    cfg = config("lq_validation")
    errors, inactive_all = [], True
    for M in cfg.lq_check["sweep_states"]:
        level = cfg.with_grid(M, M - 1, M if cfg.lq_check["controls_tied"] else None)
        problem = level.build()
        params = LQParams.from_cost(problem.cost, problem.initial.mean())
        oracle = solve_riccati(params, problem.times)
        lo, _ = learn_from_below(problem, level.solver["tol"], level.solver["max_iter"])
        hi, _ = learn_from_above(problem, level.solver["tol"], level.solver["max_iter"])
        g, c = level.grid, level.controls
        inactive, _, _ = clipping_margin(oracle, params, g["x_min"], g["x_max"], c["min"], c["max"])
        inactive_all &= inactive
        errors.append(max(mean_error(lo.flow, oracle), mean_error(hi.flow, oracle)))
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    ok = (list(cfg.lq_check["sweep_states"])[-1] == 201 and inactive_all and decreasing
          and errors[-1] <= 2e-2)
    errs = ", ".join(f"{e:.5f}" for e in errors)
    return ok, (f"mean errors at M={list(cfg.lq_check['sweep_states'])}: {errs}; "
                f"decreasing={decreasing} clipping_inactive={inactive_all}")


def criterion_7():
    problem, lo, _, hi, _, _ = solved("threshold_penalized")
    j_lo = expected_cost(problem, lo.policy, lo.flow)
    j_hi = expected_cost(problem, hi.policy, hi.flow)
    return j_lo <= j_hi + 1e-10, f"J_min={j_lo:.6f} J_max={j_hi:.6f}"


def criterion_8():
    parts, ok = [], True
    for name in ("common_noise", "common_noise_small"):
        cfg = config(name)
        problem = cfg.build()
        cn = cfg.common_noise
        game = CommonNoiseGame(problem, ScenarioTree(cn["depth"], cn["sigma0"], problem.times.horizon))
        tol, max_iter = cfg.solver["tol"], cfg.solver["max_iter"]
        try:
            lo, tlo = cn_learn_from_below(game, tol, max_iter)
            hi, thi = cn_learn_from_above(game, tol, max_iter)
        except MonotonicityError as exc:
            return False, f"{name}: {exc}"
        bad = tlo.monotone.count(False) + thi.monotone.count(False)
        ordered = cflow_leq(lo.flow, hi.flow, CDF_TOL)
        good = bad == 0 and ordered and lo.converged and hi.converged
        msg = f"{name}: violations={bad} min<=max={ordered}"
        if cn["check_continuity"]:
            ref_lo, _ = learn_from_below(problem, tol, max_iter)
            ref_hi, _ = learn_from_above(problem, tol, max_iter)
            s = game.steps_per_level
            gap = max(max_gap_to_flow_means(lo, ref_lo.flow.means(), s),
                      max_gap_to_flow_means(hi, ref_hi.flow.means(), s))
            ratio = cn["sigma0"] / problem.dynamics.sigma
            good &= gap <= 5e-3 and abs(ratio - 1e-3) <= 1e-15
            msg += f" sigma0/sigma={ratio:.0e} gap={gap:.2e}"
        ok &= good
        parts.append(msg)
    return ok, "; ".join(parts)


def criterion_9():
    rep = run_lattice_laws(StateGrid.uniform(-2.0, 2.0, 15), 1000, seed=2024)
    return rep.failures == 0, f"1000 trials, failures={rep.failures} {rep.failed_laws or ''}".strip()


def _tree_bytes(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def criterion_10():
    names = ["decoupled", "threshold", "order1"]
    args = [a for n in names for a in ("--config", str(CONFIGS / f"{n}.toml"))]
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        codes = [main(["solve", "--out", str(tmp / "a"), "--jobs", "1"] + args),
                 main(["solve", "--out", str(tmp / "b"), "--jobs", "2"] + args),
                 main(["solve", "--out", str(tmp / "c"), "--jobs", "1"] + args)]
        env = dict(os.environ, OMP_NUM_THREADS="4", OPENBLAS_NUM_THREADS="4", MKL_NUM_THREADS="4")
        r = subprocess.run([sys.executable, "-m", "submodular_mfg.cli", "solve", "--out",
                            str(tmp / "d"), "--jobs", "2"] + args, env=env, capture_output=True)
        codes.append(r.returncode)
        trees = [_tree_bytes(tmp / d) for d in "abcd"]
    same = all(t == trees[0] for t in trees[1:])
    n_csv = sum(k.endswith(".csv") for k in trees[0])
    ok = same and codes == [0, 0, 0, 0] and n_csv > 0
    return ok, f"{n_csv} CSVs over 4 runs (jobs 1/2, threads 1/4), identical={same}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def report(n, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"


@pytest.mark.parametrize("n", range(1, 11))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        print("\n" + report(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = [fn() for fn in CRITERIA]
    for n, (ok, detail) in enumerate(results, 1):
        print(report(n, ok, detail))
    sys.exit(0 if all(ok for ok, _ in results) else 1)
