"""Command line front end.

Subcommands: ``solve``, ``verify``, ``lq-check``, ``common-noise`` and
``sweep``.  Exit codes: 0 success, 1 failed check, 2 invalid configuration
(including CFL violations), 3 monotonicity error, 4 not converged.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .chain import (
    CFLError,
    TieBreak,
    brute_force_best_response,
    build_chain,
    solve_best_response,
    value_policy_to_csv,
)
from .common_noise import (
    CommonNoiseGame,
    ScenarioTree,
    cflow_leq,
    cn_learn_from_above,
    cn_learn_from_below,
    max_gap_to_flow_means,
)
from .config import ConfigError, RunConfig
from .lattice_checks import run_lattice_laws
from .lq import LQParams, clipping_margin, mean_error, shooting_mean_flow, solve_riccati
from .measures import (
    DiscreteMeasure,
    StateGrid,
    TimeGrid,
    flow_distance,
    flow_leq,
    flow_to_csv,
    join,
    meet,
)
from .mfg import (
    MonotonicityError,
    learn_from_above,
    learn_from_below,
    random_flow,
    summary_lines,
    verify_monotone_R,
)
from .model import ControlSet, MFGProblem, check_submodularity

log = logging.getLogger("submodular_mfg")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MONOTONE, EXIT_UNCONVERGED = 0, 1, 2, 3, 4


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _kv(items) -> str:
    return "".join(f"{k}: {v!r}\n" if isinstance(v, float) else f"{k}: {v}\n" for k, v in items)


# -- solve -----------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path) -> int:
    problem = cfg.build()
    tol, max_iter = cfg.solver["tol"], cfg.solver["max_iter"]
    results = {}
    for label, fn in (("minimal", learn_from_below), ("maximal", learn_from_above)):
        try:
            sol, trace = fn(problem, tol, max_iter)
        except MonotonicityError as exc:
            _write(out / "summary.txt", _kv([("status", "monotonicity_error"),
                                             ("run", label), ("message", str(exc))]))
            log.error("%s: %s", label, exc)
            return EXIT_MONOTONE
        results[label] = sol
        _write(out / f"{label}_flow.csv", flow_to_csv(sol.flow))
        _write(out / f"{label}_trace.csv", trace.to_csv())
        _write(out / f"{label}_value_policy.csv", value_policy_to_csv(sol.value, sol.policy))
        if cfg.output["write_iterates"]:
            for n, fl in enumerate(trace.flows):
                _write(out / f"{label}_iterates" / f"iter_{n:03d}.csv", flow_to_csv(fl))
    lo, hi = results["minimal"], results["maximal"]
    ordered = flow_leq(lo.flow, hi.flow)
    status = "ok" if lo.converged and hi.converged else "unconverged"
    text = _kv([("status", status), ("config", cfg.name), ("minimal_below_maximal", ordered)])
    _write(out / "summary.txt", text + summary_lines(lo, hi, tol))
    return EXIT_OK if status == "ok" else EXIT_UNCONVERGED


# -- verify ------------------------------------------------------------------------

def tiny_instance(problem: MFGProblem, seed: int):
    """A 3-step, 5-state, 3-control copy of ``problem`` for the brute-force check."""
    rng = np.random.default_rng(seed)
    xs = problem.grid.points
    grid = StateGrid.uniform(xs[0], xs[-1], 5)
    us = problem.controls.values
    ctrl = ControlSet.uniform(us[0], us[-1], min(3, us.size))
    horizon = problem.times.horizon
    dyn = problem.dynamics
    # shrink dt until the coarse chain is admissible
    for steps in (3, 2, 1):
        times = TimeGrid(horizon * steps / 3, steps)
        tiny = MFGProblem(dyn, problem.cost, ctrl, grid, times,
                          DiscreteMeasure(grid, rng.uniform(0.1, 1.0, 5)))
        try:
            flow = random_flow(tiny, rng)
            return tiny, flow, build_chain(tiny, flow)
        except CFLError:
            continue
    times = TimeGrid(1e-3, 1)
    tiny = MFGProblem(dyn, problem.cost, ctrl, grid, times, DiscreteMeasure(grid, np.ones(5)))
    flow = random_flow(tiny, rng)
    return tiny, flow, build_chain(tiny, flow)


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    problem = cfg.build()
    seed = cfg.solver["seed"]
    rng = np.random.default_rng(seed)
    # ordered measure pairs for the submodularity falsifier
    pairs = []
    for _ in range(20):
        a, b = random_flow(problem, rng), random_flow(problem, rng)
        k = int(rng.integers(1, problem.times.steps + 1))
        lo, hi = a[k], b[k]
        pairs.append((meet(lo, hi), join(lo, hi)))
    sub = check_submodularity(problem.cost, problem.grid, pairs,
                              times=problem.times.times[[0, -2]])
    mono = verify_monotone_R(problem, cfg.solver["verify_pairs"], seed, cfg.tie_break)
    laws = run_lattice_laws(problem.grid, 200, seed)
    tiny, flow, chain = tiny_instance(problem, seed)
    dp_gap, same_policy = 0.0, True
    for tb in TieBreak:
        v1, p1 = solve_best_response(chain, tiny.cost, flow, tb)
        v2, p2 = brute_force_best_response(chain, tiny.cost, flow, tb)
        dp_gap = max(dp_gap, float(np.max(np.abs(v1.values - v2.values))))
        same_policy &= p1 == p2
    dp_ok = dp_gap <= 1e-12 and same_policy
    items = [
        ("config", cfg.name),
        ("submodularity_max_violation", sub.max_violation),
        ("submodularity_passed", sub.passed),
        ("monotone_R_pairs", mono.pairs),
        ("monotone_R_violations", mono.violations),
        ("lattice_laws_failures", laws.failures),
        ("dp_vs_brute_force_gap", dp_gap),
        ("dp_vs_brute_force_policy_equal", same_policy),
        ("chain_monotone_kernel", build_chain(problem, random_flow(problem, rng)).is_monotone()),
    ]
    passed = sub.passed and mono.passed and laws.failures == 0 and dp_ok
    items.append(("status", "pass" if passed else "fail"))
    lines = ["pair,time_index,state_index,cdf_gap"]
    for w in mono.witnesses:
        lines.append(f"{w['pair']},{w['time_index']},{w['state_index']},{w['cdf_gap']!r}")
    _write(out / "monotone_R_witnesses.csv", "\n".join(lines) + "\n")
    _write(out / "verify.txt", _kv(items))
    return EXIT_OK if passed else EXIT_FAIL


# -- lq-check ----------------------------------------------------------------------

def lq_params(cfg: RunConfig, problem: MFGProblem) -> LQParams:
    if cfg.model["cost"] != "lq" or cfg.model["dynamics"] != "affine":
        raise ConfigError("lq-check needs cost = 'lq' with affine dynamics")
    mean0 = cfg.lq_check["mean0"]
    if mean0 is None:
        mean0 = problem.initial.mean()
    return LQParams.from_cost(problem.cost, mean0)


def _lq_run(cfg: RunConfig):
    problem = cfg.build()
    params = lq_params(cfg, problem)
    oracle = solve_riccati(params, problem.times)
    tol, max_iter = cfg.solver["tol"], cfg.solver["max_iter"]
    lo, _ = learn_from_below(problem, tol, max_iter)
    hi, _ = learn_from_above(problem, tol, max_iter)
    g, c = cfg.grid, cfg.controls
    inactive, worst, band = clipping_margin(oracle, params, g["x_min"], g["x_max"],
                                            c["min"], c["max"])
    return problem, params, oracle, lo, hi, inactive, worst


def cmd_lq_check(cfg: RunConfig, out: Path) -> int:
    problem, params, oracle, lo, hi, inactive, worst = _lq_run(cfg)
    shoot = shooting_mean_flow(params, problem.times)
    err_lo, err_hi = mean_error(lo.flow, oracle), mean_error(hi.flow, oracle)
    tol = cfg.lq_check["tolerance"]
    passed = max(err_lo, err_hi) <= tol and inactive and lo.converged and hi.converged
    _write(out / "riccati.csv", oracle.to_csv())
    _write(out / "minimal_flow.csv", flow_to_csv(lo.flow))
    _write(out / "maximal_flow.csv", flow_to_csv(hi.flow))
    items = [
        ("config", cfg.name),
        ("mean_error_minimal", err_lo),
        ("mean_error_maximal", err_hi),
        ("tolerance", float(tol)),
        ("oracle_vs_shooting", float(np.max(np.abs(oracle.mean - shoot)))),
        ("oracle_iterations", oracle.iterations),
        ("clipping_inactive", inactive),
        ("max_feedback_control", worst),
        ("status", "pass" if passed else "fail"),
    ]
    _write(out / "lq_check.txt", _kv(items))
    return EXIT_OK if passed else EXIT_FAIL


# -- common noise ------------------------------------------------------------------

def cmd_common_noise(cfg: RunConfig, out: Path) -> int:
    problem = cfg.build()
    cn = cfg.common_noise
    tree = ScenarioTree(cn["depth"], cn["sigma0"], problem.times.horizon)
    try:
        game = CommonNoiseGame(problem, tree)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tol, max_iter = cfg.solver["tol"], cfg.solver["max_iter"]
    try:
        lo, tlo = cn_learn_from_below(game, tol, max_iter)
        hi, thi = cn_learn_from_above(game, tol, max_iter)
    except MonotonicityError as exc:
        _write(out / "common_noise.txt", _kv([("status", "monotonicity_error"),
                                              ("message", str(exc))]))
        return EXIT_MONOTONE
    _write(out / "minimal_conditional.csv", lo.flow.to_csv())
    _write(out / "maximal_conditional.csv", hi.flow.to_csv())
    _write(out / "minimal_trace.csv", tlo.to_csv())
    _write(out / "maximal_trace.csv", thi.to_csv())
    ref_lo, _ = learn_from_below(problem, tol, max_iter)
    ref_hi, _ = learn_from_above(problem, tol, max_iter)
    s = game.steps_per_level
    gap_lo = max_gap_to_flow_means(lo, ref_lo.flow.means(), s)
    gap_hi = max_gap_to_flow_means(hi, ref_hi.flow.means(), s)
    tower = max(max(tlo.tower_gaps), max(thi.tower_gaps))
    ordered = cflow_leq(lo.flow, hi.flow)
    items = [
        ("config", cfg.name),
        ("depth", tree.depth),
        ("sigma0", tree.sigma0),
        ("minimal_iterations", lo.iterations),
        ("maximal_iterations", hi.iterations),
        ("minimal_residual", lo.residual),
        ("maximal_residual", hi.residual),
        ("minimal_below_maximal", ordered),
        ("tower_gap", tower),
        ("gap_to_no_common_noise_minimal", gap_lo),
        ("gap_to_no_common_noise_maximal", gap_hi),
        ("compare_tol", float(cn["compare_tol"])),
    ]
    if not (lo.converged and hi.converged):
        _write(out / "common_noise.txt", _kv(items + [("status", "unconverged")]))
        return EXIT_UNCONVERGED
    passed = ordered and tower <= 1e-10
    if cn["check_continuity"]:
        passed = passed and max(gap_lo, gap_hi) <= cn["compare_tol"]
    items.append(("status", "pass" if passed else "fail"))
    _write(out / "common_noise.txt", _kv(items))
    return EXIT_OK if passed else EXIT_FAIL


# -- sweep -------------------------------------------------------------------------

def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    """Grid refinement: ``steps = states - 1`` and, when ``controls_tied``,
    one control per state.  LQ configs are compared with the Riccati oracle."""
    is_lq = cfg.model["cost"] == "lq" and cfg.model["dynamics"] == "affine"
    lines = ["states,steps,controls,error_minimal,error_maximal,terminal_mean_minimal,"
             "terminal_mean_maximal,distance_min_max"]
    errors = []
    for M in cfg.lq_check["sweep_states"]:
        K = M if cfg.lq_check["controls_tied"] else None
        level = cfg.with_grid(M, M - 1, K)
        level.validate()
        if is_lq:
            problem, params, oracle, lo, hi, _, _ = _lq_run(level)
            e_lo, e_hi = mean_error(lo.flow, oracle), mean_error(hi.flow, oracle)
        else:
            problem = level.build()
            lo, _ = learn_from_below(problem, level.solver["tol"], level.solver["max_iter"])
            hi, _ = learn_from_above(problem, level.solver["tol"], level.solver["max_iter"])
            e_lo = e_hi = float("nan")
        errors.append(max(e_lo, e_hi))
        lines.append(",".join([str(M), str(M - 1), str(problem.controls.size), repr(e_lo),
                               repr(e_hi), repr(float(lo.flow.means()[-1])),
                               repr(float(hi.flow.means()[-1])),
                               repr(flow_distance(lo.flow, hi.flow))]))
    _write(out / "sweep.csv", "\n".join(lines) + "\n")
    if not is_lq:
        return EXIT_OK
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    passed = decreasing and errors[-1] <= cfg.lq_check["tolerance"]
    _write(out / "sweep.txt", _kv([("errors", [float(e) for e in errors]),
                                   ("decreasing", decreasing),
                                   ("status", "pass" if passed else "fail")]))
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "lq-check": cmd_lq_check,
    "common-noise": cmd_common_noise,
    "sweep": cmd_sweep,
}


def run_one(command: str, config_path: str, out_dir: str, overrides: dict, multi: bool) -> int:
    try:
        cfg = RunConfig.load(config_path).with_overrides(**overrides)
        cfg.validate()
        out = Path(out_dir or cfg.output["dir"])
        if multi:
            out = out / cfg.name
        return COMMANDS[command](cfg, out)
    except CFLError as exc:
        print(f"error: {exc} (required dt <= {exc.required_dt:.6g})", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MonotonicityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MONOTONE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="submodular-mfg",
                                 description="Monotone learning for submodular mean field games")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", action="append", required=True,
                        help="TOML run configuration (repeatable)")
        sp.add_argument("--out", help="output directory (default: output.dir of the config)")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--jobs", type=int, default=1, help="configs run concurrently")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"tol": args.tol, "max_iter": args.max_iter}
    multi = len(args.config) > 1
    jobs = [(args.command, c, args.out, overrides, multi) for c in args.config]
    if args.jobs > 1 and multi:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(run_one, *zip(*jobs)))
    else:
        codes = [run_one(*j) for j in jobs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
