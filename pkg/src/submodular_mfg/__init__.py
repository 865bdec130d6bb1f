"""Submodular mean field games on a monotone Markov-chain discretisation.

Minimal and maximal equilibria are computed by iterating the best-response
map from the extremes of the lattice of measure flows.
"""

from .chain import (
    CFLError,
    MarkovChainModel,
    Policy,
    TieBreak,
    ValueFunction,
    best_response,
    brute_force_best_response,
    build_chain,
    push_forward,
    solve_best_response,
)
from .common_noise import (
    CommonNoiseGame,
    ConditionalFlow,
    ScenarioTree,
    cn_best_response,
    cn_brute_force_best_response,
    cn_learn_from_above,
    cn_learn_from_below,
)
from .config import ConfigError, RunConfig
from .lq import LQParams, RiccatiSolution, shooting_mean_flow, solve_riccati
from .measures import (
    DiscreteMeasure,
    MeasureFlow,
    StateGrid,
    TimeGrid,
    dominates,
    envelope_bounds,
    flow_distance,
    flow_leq,
    join,
    kolmogorov_distance,
    meet,
)
from .mfg import (
    MfgSolution,
    MonotonicityError,
    expected_cost,
    extremal_flows,
    learn_from,
    learn_from_above,
    learn_from_below,
    moment_bound,
    residual,
    verify_monotone_R,
)
from .model import (
    AffineDynamics,
    ControlSet,
    CostModel,
    GeometricDynamics,
    GeometricMeanFieldDynamics,
    MFGProblem,
    OUMeanFieldDynamics,
    check_submodularity,
    lq_model,
    order1_model,
    threshold_model,
)

__version__ = "0.1.0"
