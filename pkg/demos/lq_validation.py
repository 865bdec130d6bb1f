"""
Grid equilibrium against the Riccati solution
=============================================

For linear dynamics and quadratic costs the equilibrium mean solves a small
ODE system.  Refining the grid brings the chain equilibrium towards it.
"""

# %%
from pathlib import Path

import numpy as np

from submodular_mfg.config import RunConfig
from submodular_mfg.lq import LQParams, clipping_margin, mean_error, shooting_mean_flow, solve_riccati
from submodular_mfg.mfg import learn_from_above, learn_from_below

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
cfg = RunConfig.load(CONFIGS / "lq_validation.toml")

# %%
# Reference mean flow on the coarsest time grid, with a shooting cross-check.
problem = cfg.with_grid(51, 50, 51).build()
params = LQParams.from_cost(problem.cost, problem.initial.mean())
oracle = solve_riccati(params, problem.times)
shot = shooting_mean_flow(params, problem.times)
print("fixed-point iterations:", oracle.iterations)
print("max |riccati - shooting| =", float(np.max(np.abs(oracle.mean - shot))))

# %%
# The feedback over mean +- 5 sd never reaches the control bounds.
g, c = cfg.grid, cfg.controls
inactive, worst, band = clipping_margin(oracle, params, g["x_min"], g["x_max"], c["min"], c["max"])
print("clipping inactive:", inactive, " largest |a|:", round(worst, 3), " band:", np.round(band, 3))

# %%
# Refinement sweep: states, steps and controls grow together.
for M in (51, 101, 201):
    p = cfg.with_grid(M, M - 1, M).build()
    o = solve_riccati(LQParams.from_cost(p.cost, p.initial.mean()), p.times)
    lo, _ = learn_from_below(p)
    hi, _ = learn_from_above(p)
    print(f"M={M:4d}  error={max(mean_error(lo.flow, o), mean_error(hi.flow, o)):.5f}")
