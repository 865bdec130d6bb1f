"""Run configuration: a TOML file describing the model, grids, solver and
output, turned into an :class:`MFGProblem`.

Every section has explicit defaults (see ``configs/reference.toml``).
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .chain import TieBreak, build_chain
from .measures import DiscreteMeasure, StateGrid, TimeGrid
from .model import (
    AffineDynamics,
    ControlSet,
    GeometricDynamics,
    GeometricMeanFieldDynamics,
    MFGProblem,
    OUMeanFieldDynamics,
    lq_model,
    order1_model,
    threshold_model,
)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULTS = {
    "name": "run",
    "model": {
        "cost": "lq",
        "dynamics": "affine",
        "sigma": 0.3,
        # affine drift c + p x + q a
        "c": 0.0, "p": 0.0, "q": 1.0,
        # lq cost
        "n": 1.0, "m": 1.0, "mhat": -0.5, "h": 1.0, "hhat": -0.5, "enforce_signs": True,
        # threshold cost
        "penalty": 0.0,
        # order-one interaction
        "running_kernel": "squared_distance", "terminal_kernel": "arctan_tilt",
        "running_weight": 1.0, "control_weight": 1.0,
        # mean-field drift shift m(mean) = clip(shift_slope * mean, -shift_bound, shift_bound)
        "kappa": -0.5, "shift_slope": 0.5, "shift_bound": 0.5,
        # geometric rate b = rate + a
        "rate": 0.0,
    },
    "controls": {"min": -2.0, "max": 2.0, "size": 11},
    "initial": {"kind": "gaussian", "center": 0.5, "std": 0.4, "lo": -1.0, "hi": 1.0,
                "point": 0.0, "points": [-1.0, 1.0], "weights": [0.5, 0.5]},
    "grid": {"x_min": -3.0, "x_max": 3.0, "states": 101, "steps": 100, "horizon": 1.0,
             "truncation": "fold"},
    "solver": {"tol": 1e-8, "max_iter": 200, "tie_break": "lowest", "seed": 0,
               "verify_pairs": 50},
    "common_noise": {"depth": 10, "sigma0": 0.03, "compare_tol": 5e-3,
                     "check_continuity": False},
    "lq_check": {"mean0": None, "tolerance": 2e-2, "sweep_states": [51, 101, 201],
                 "controls_tied": True},
    "output": {"dir": "out", "write_iterates": True},
}


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {path}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be a table")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


KERNELS = {
    "squared_distance": lambda x, y: 0.5 * (x - y) ** 2,
    "arctan_tilt": lambda x, y: 0.5 * x ** 2 - x * np.arctan(y),
    "linear_tilt": lambda x, y: 0.5 * x ** 2 - x * y,
}


@dataclass
class RunConfig:
    name: str
    model: dict
    controls: dict
    initial: dict
    grid: dict
    solver: dict
    common_noise: dict
    lq_check: dict
    output: dict
    source: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict, source: Optional[str] = None) -> "RunConfig":
        merged = _merge(DEFAULTS, data)
        cfg = cls(source=source, **merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        data.setdefault("name", path.stem)
        return cls.from_dict(data, str(path))

    def with_overrides(self, **solver) -> "RunConfig":
        out = copy.deepcopy(self)
        out.solver.update({k: v for k, v in solver.items() if v is not None})
        return out

    def with_grid(self, states: int, steps: int, controls: Optional[int] = None) -> "RunConfig":
        out = copy.deepcopy(self)
        out.grid.update(states=int(states), steps=int(steps))
        if controls is not None:
            out.controls["size"] = int(controls)
        return out

    @property
    def tie_break(self) -> TieBreak:
        return TieBreak(self.solver["tie_break"])

    def validate(self):
        g = self.grid
        if g["truncation"] != "fold":
            raise ConfigError("only truncation = 'fold' (boundary moves stay put) is supported")
        if g["states"] < 2 or g["steps"] < 1 or g["horizon"] <= 0 or g["x_max"] <= g["x_min"]:
            raise ConfigError("grid needs states >= 2, steps >= 1, horizon > 0, x_max > x_min")
        if self.solver["tie_break"] not in ("lowest", "highest"):
            raise ConfigError("solver.tie_break must be 'lowest' or 'highest'")
        try:
            problem = self.build()
            build_chain(problem, _probe_flow(problem))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- builders -------------------------------------------------------------

    def state_grid(self) -> StateGrid:
        g = self.grid
        return StateGrid.uniform(g["x_min"], g["x_max"], g["states"])

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.grid["horizon"], self.grid["steps"])

    def control_set(self) -> ControlSet:
        c = self.controls
        return ControlSet.uniform(c["min"], c["max"], c["size"])

    def initial_law(self, grid: StateGrid) -> DiscreteMeasure:
        return initial_law(self.initial, grid)

    def dynamics(self):
        md = self.model
        kind, sigma = md["dynamics"], md["sigma"]
        slope, bound = md["shift_slope"], md["shift_bound"]
        shift = lambda mean: float(np.clip(slope * mean, -bound, bound))
        if kind == "affine":
            return AffineDynamics(md["c"], md["p"], md["q"], sigma=sigma)
        if kind == "ou_mean_field":
            return OUMeanFieldDynamics(md["kappa"], shift, bound, sigma=sigma)
        if kind == "geometric":
            rate = md["rate"]
            return GeometricDynamics(lambda t, x, a: rate + a, sigma=sigma)
        if kind == "geometric_mean_field":
            return GeometricMeanFieldDynamics(shift, bound, sigma=sigma)
        raise ConfigError(f"unknown dynamics {kind!r}")

    def cost(self):
        md = self.model
        kind = md["cost"]
        if kind == "lq":
            return self.lq()[1]
        if kind == "threshold":
            return threshold_model(md["penalty"])
        if kind == "order1":
            try:
                run, term = KERNELS[md["running_kernel"]], KERNELS[md["terminal_kernel"]]
            except KeyError as exc:
                raise ConfigError(f"unknown kernel {exc}") from exc
            return order1_model(run, term, md["control_weight"], md["running_weight"])
        raise ConfigError(f"unknown cost {kind!r}")

    def lq(self):
        md = self.model
        return lq_model(md["c"], md["p"], md["q"], md["n"], md["m"], md["mhat"], md["h"],
                        md["hhat"], sigma=md["sigma"], horizon=self.grid["horizon"],
                        enforce_signs=md["enforce_signs"])

    def build(self) -> MFGProblem:
        grid = self.state_grid()
        md = self.model
        if md["cost"] == "lq" and md["dynamics"] == "affine":
            dyn, cost = self.lq()
        else:
            dyn, cost = self.dynamics(), self.cost()
        return MFGProblem(dyn, cost, self.control_set(), grid, self.time_grid(),
                          self.initial_law(grid), name=self.name)


def _probe_flow(problem: MFGProblem):
    """Constant flow used to precompute the CFL number at load time."""
    from .measures import MeasureFlow
    return MeasureFlow.constant(problem.initial, problem.initial, problem.times.steps)


def initial_law(law: dict, grid: StateGrid) -> DiscreteMeasure:
    """Point mass, uniform on an interval, two-point mixture or truncated
    Gaussian, projected on the grid and renormalised."""
    x = grid.points
    kind = law["kind"]
    if kind == "point":
        return DiscreteMeasure.point_mass(grid, law["point"])
    if kind == "uniform":
        w = ((x >= law["lo"] - 1e-12) & (x <= law["hi"] + 1e-12)).astype(float)
    elif kind == "two_point":
        pts, ws = law["points"], law["weights"]
        if len(pts) != 2 or len(ws) != 2:
            raise ConfigError("two_point needs two points and two weights")
        w = np.zeros(grid.size)
        for p, q in zip(pts, ws):
            w[grid.nearest_index(p)] += q
    elif kind == "gaussian":
        if law["std"] <= 0:
            raise ConfigError("gaussian initial law needs std > 0")
        w = np.exp(-0.5 * ((x - law["center"]) / law["std"]) ** 2)
    else:
        raise ConfigError(f"unknown initial law {kind!r}")
    if not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("initial law is not normalisable on the grid")
    return DiscreteMeasure(grid, w)
