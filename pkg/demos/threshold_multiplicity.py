"""
Two equilibria from one threshold game
======================================

The terminal cost pulls each player towards 1 if the population mean ends
up nonnegative and towards 0 otherwise.  Learning from the smallest flow
and from the largest flow lands on two different equilibria.
"""

# %%
from pathlib import Path

import numpy as np

from submodular_mfg.config import RunConfig
from submodular_mfg.measures import flow_distance, flow_leq
from submodular_mfg.mfg import expected_cost, learn_from_above, learn_from_below

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
problem = RunConfig.load(CONFIGS / "threshold.toml").build()
print(problem.grid.size, "states,", problem.times.steps, "steps,", problem.controls.size, "controls")

# %%
# Iterate the best response from both ends of the lattice.
lo, trace_lo = learn_from_below(problem)
hi, trace_hi = learn_from_above(problem)
print("below: iterations", lo.iterations, "residuals", trace_lo.residuals)
print("above: iterations", hi.iterations, "residuals", trace_hi.residuals)

# %%
# Mean paths, every 20 steps.
idx = np.arange(0, problem.times.steps + 1, 20)
print("t        ", np.round(problem.times.times[idx], 2))
print("minimal  ", np.round(lo.flow.means()[idx], 4))
print("maximal  ", np.round(hi.flow.means()[idx], 4))
print("ordered:", flow_leq(lo.flow, hi.flow), " distance:", round(flow_distance(lo.flow, hi.flow), 4))

# %%
# The penalized variant charges 5 whenever the mean is nonnegative, so the
# lower equilibrium is also the cheaper one.
pen = RunConfig.load(CONFIGS / "threshold_penalized.toml").build()
plo, _ = learn_from_below(pen)
phi, _ = learn_from_above(pen)
print("J(minimal) =", round(expected_cost(pen, plo.policy, plo.flow), 4))
print("J(maximal) =", round(expected_cost(pen, phi.policy, phi.flow), 4))
