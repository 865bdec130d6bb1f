import numpy as np
import pytest

from submodular_mfg.lq import (
    LQParams,
    clipping_margin,
    compare_to_grid,
    riccati_from_csv,
    shooting_mean_flow,
    solve_riccati,
)
from submodular_mfg.measures import DiscreteMeasure, StateGrid, TimeGrid
from submodular_mfg.mfg import learn_from_above, learn_from_below
from submodular_mfg.model import ControlSet, MFGProblem, lq_model

VALIDATION = dict(c=0.0, p=0.0, q=1.0, n=1.0, m=1.0, mhat=-0.5, h=1.0, hhat=-0.5,
                  sigma=0.2, horizon=1.0, mean0=1.0)


def test_zero_state_cost():
    P = LQParams(m=0.0, mhat=0.0, h=0.0, hhat=0.0, mean0=0.7)
    sol = solve_riccati(P, TimeGrid(1.0, 50))
    assert np.all(sol.A == 0) and np.allclose(sol.mean, 0.7) and sol.iterations == 1
    assert np.allclose(sol.feedback(3, np.linspace(-1, 1, 5), P), 0.0)


def test_decoupled_single_pass():
    sol = solve_riccati(LQParams(mhat=0.0, hhat=0.0, sigma=0.3, mean0=1.0), TimeGrid(1.0, 50))
    assert sol.iterations == 1 and sol.residual == 0.0
    assert sol.A[-1] == 1.0


def test_validation_closed_form_parts():
    tg = TimeGrid(1.0, 200)
    sol = solve_riccati(LQParams(**VALIDATION), tg)
    assert np.allclose(sol.A, 1.0, atol=1e-12)          # -A' = 1 - A^2 with A(T) = 1
    assert sol.residual <= 1e-12
    # self-consistency: the final B reproduces the mean
    again = solve_riccati(LQParams(**{**VALIDATION}), tg)
    assert np.max(np.abs(again.mean - sol.mean)) <= 1e-12
    assert sol.B[-1] == pytest.approx(-0.5 * sol.mean[-1])
    # closed form with A = 1: m' = -m - B, B' = B + m/2
    # eigenvalues +-sqrt(1/2); compare with a matrix exponential solution
    from scipy.linalg import expm
    Mx = np.array([[-1.0, -1.0], [0.5, 1.0]])
    E = expm(Mx)
    # unknown B0 from B(1) = -m(1)/2
    row = np.array([0.5, 1.0]) @ E
    b0 = -row[0] * 1.0 / row[1]
    exact = np.array([(expm(Mx * t) @ [1.0, b0])[0] for t in tg.times])
    assert np.max(np.abs(sol.mean - exact)) <= 1e-6


def test_shooting_cross_check():
    tg = TimeGrid(1.0, 200)
    P = LQParams(**VALIDATION)
    sol = solve_riccati(P, tg)
    shot = shooting_mean_flow(P, tg)
    assert np.max(np.abs(sol.mean - shot)) <= 1e-5


def test_time_dependent_coefficients_cross_check():
    P = LQParams(c=lambda t: 0.2 * t, p=-0.3, q=1.0, n=lambda t: 1.0 + t, m=1.0,
                 mhat=lambda t: -0.5 - 0.2 * t, h=1.0, hhat=-0.3, sigma=0.3, mean0=0.5)
    tg = TimeGrid(1.0, 400)
    sol = solve_riccati(P, tg)
    assert np.max(np.abs(sol.mean - shooting_mean_flow(P, tg))) <= 1e-5
    assert np.all(sol.A >= 0)


def test_symmetric_value():
    P = LQParams(p=-0.4, m=1.0, mhat=-0.5, h=1.0, hhat=-0.5, sigma=0.3, mean0=0.0)
    sol = solve_riccati(P, TimeGrid(1.0, 100))
    assert np.max(np.abs(sol.B)) <= 1e-10


def test_grid_agreement_and_clipping():
    dyn, cost = lq_model(m=1, mhat=-0.5, h=1, hhat=-0.5, sigma=0.2)
    g = StateGrid.uniform(-3, 5, 101)
    tg = TimeGrid(1.0, 100)
    p = MFGProblem(dyn, cost, ControlSet.uniform(-3, 3, 101), g, tg, DiscreteMeasure.point_mass(g, 1.0))
    P = LQParams.from_cost(cost, 1.0)
    oracle = solve_riccati(P, tg)
    inactive, worst, band = clipping_margin(oracle, P, -3, 5, -3, 3)
    assert inactive and worst < 3
    lo, _ = learn_from_below(p)
    hi, _ = learn_from_above(p)
    for sol in (lo, hi):
        rep = compare_to_grid(oracle, sol.flow, sol.value)
        assert rep.mean_error <= 2.5e-2
        assert rep.value_error <= 0.1
    self_rep = compare_to_grid(oracle, lo.flow)
    assert np.isnan(self_rep.value_error)
    # a control set too small activates clipping
    assert not clipping_margin(oracle, P, -3, 5, -0.5, 0.5)[0]


def test_csv_roundtrip():
    sol = solve_riccati(LQParams(**VALIDATION), TimeGrid(1.0, 20))
    back = riccati_from_csv(sol.to_csv())
    assert np.array_equal(back["mean"], sol.mean) and np.array_equal(back["A"], sol.A)
