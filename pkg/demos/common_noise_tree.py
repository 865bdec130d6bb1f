"""
Equilibria driven by a shared shock
===================================

A binomial tree carries the common noise.  Each player sees the tree node
and reacts to the conditional mean of the population at that node.
"""

# %%
from pathlib import Path

import numpy as np

from submodular_mfg.common_noise import (
    CommonNoiseGame,
    ScenarioTree,
    cflow_distance,
    cflow_leq,
    cn_learn_from_above,
    cn_learn_from_below,
    max_gap_to_flow_means,
)
from submodular_mfg.config import RunConfig
from submodular_mfg.mfg import learn_from_below

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
cfg = RunConfig.load(CONFIGS / "common_noise.toml")
problem = cfg.build()
cn = cfg.common_noise
tree = ScenarioTree(cn["depth"], cn["sigma0"], problem.times.horizon)
game = CommonNoiseGame(problem, tree)
print("levels:", tree.depth, " time steps per level:", game.steps_per_level)

# %%
lo, tlo = cn_learn_from_below(game)
hi, thi = cn_learn_from_above(game)
print("iterations:", lo.iterations, hi.iterations, " monotone:", all(tlo.monotone), all(thi.monotone))
print("minimal <= maximal node by node:", cflow_leq(lo.flow, hi.flow))
print("distance between them:", cflow_distance(lo.flow, hi.flow))

# %%
# Conditional means at the last level fan out with the common shock.
last = lo.flow[tree.depth]
print("B at last level:", np.round(tree.b_values(tree.depth), 3))
print("conditional mean:", np.round(last, 3))

# %%
# Shrinking the shock to 1e-3 of the idiosyncratic noise recovers the
# equilibrium without common noise.
small = RunConfig.load(CONFIGS / "common_noise_small.toml")
sp = small.build()
sgame = CommonNoiseGame(sp, ScenarioTree(small.common_noise["depth"], small.common_noise["sigma0"],
                                         sp.times.horizon))
slo, _ = cn_learn_from_below(sgame)
ref, _ = learn_from_below(sp)
print("largest gap to the plain equilibrium mean:",
      max_gap_to_flow_means(slo, ref.flow.means(), sgame.steps_per_level))
