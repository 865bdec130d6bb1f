"""Randomised checks of the lattice laws for meet and join of grid measures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measures import CDF_TOL, DiscreteMeasure, StateGrid, dominates, join, meet


def random_measure(grid: StateGrid, rng: np.random.Generator) -> DiscreteMeasure:
    """Random law on ``grid``: sparse or dense, with a random number of atoms."""
    w = rng.exponential(size=grid.size)
    keep = rng.uniform(size=grid.size) < rng.uniform(0.1, 1.0)
    if keep.any():
        w = w * keep
    return DiscreteMeasure(grid, w)


def _close(a: DiscreteMeasure, b: DiscreteMeasure) -> bool:
    return float(np.max(np.abs(a.cdf - b.cdf))) <= CDF_TOL


LAWS = {
    "meet_commutative": lambda a, b, c: _close(meet(a, b), meet(b, a)),
    "join_commutative": lambda a, b, c: _close(join(a, b), join(b, a)),
    "meet_associative": lambda a, b, c: _close(meet(meet(a, b), c), meet(a, meet(b, c))),
    "join_associative": lambda a, b, c: _close(join(join(a, b), c), join(a, join(b, c))),
    "meet_idempotent": lambda a, b, c: _close(meet(a, a), a),
    "join_idempotent": lambda a, b, c: _close(join(a, a), a),
    "absorption_meet_join": lambda a, b, c: _close(meet(a, join(a, b)), a),
    "absorption_join_meet": lambda a, b, c: _close(join(a, meet(a, b)), a),
    "meet_is_lower_bound": lambda a, b, c: dominates(meet(a, b), a) and dominates(meet(a, b), b),
    "join_is_upper_bound": lambda a, b, c: dominates(a, join(a, b)) and dominates(b, join(a, b)),
    "dominance_iff_meet": lambda a, b, c: dominates(a, b) == _close(meet(a, b), a),
    "dominance_iff_join": lambda a, b, c: dominates(a, b) == _close(join(a, b), b),
}


@dataclass
class LawReport:
    trials: int
    failures: int = 0
    failed_laws: dict = field(default_factory=dict)


def run_lattice_laws(grid: StateGrid, trials: int = 1000, seed: int = 0) -> LawReport:
    """Evaluate every law on ``trials`` random triples; a third of the triples
    use comparable pairs so the dominance laws are exercised in both directions."""
    rng = np.random.default_rng(seed)
    rep = LawReport(trials)
    for t in range(trials):
        a, b, c = (random_measure(grid, rng) for _ in range(3))
        if t % 3 == 0:
            a, b = meet(a, b), join(a, b)
        for name, law in LAWS.items():
            if not law(a, b, c):
                rep.failures += 1
                rep.failed_laws[name] = rep.failed_laws.get(name, 0) + 1
    return rep
