import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disped.costs import GeneratorFleet, load_fleet
from disped.oracle import (DispatchProblem, InfeasibleDispatch, distance_to_solution_set, kkt_check,
                           solve_lambda_iteration)
from disped.scenario import BUNDLED, load_config
from factories import random_problem

EPS = 0.0086


def qp_reference(p: DispatchProblem):
    f = p.fleet
    x = cp.Variable(f.n)
    obj = cp.sum(f.a) + f.b @ x + cp.sum(cp.multiply(f.c, cp.square(x)))
    prob = cp.Problem(cp.Minimize(obj), [cp.sum(x) == p.total_load, x >= f.pmin, x <= f.pmax])
    prob.solve(solver="CLARABEL", tol_gap_rel=1e-12, tol_feas=1e-12, tol_gap_abs=1e-12)
    return x.value, prob.value


def grid_minimum_3(f: GeneratorFleet, load: float, step: float = 1e-3):
    best = (np.inf, None)
    p1 = np.arange(f.pmin[0], f.pmax[0] + step / 2, step)
    p2 = np.arange(f.pmin[1], f.pmax[1] + step / 2, step)
    for x in p1:
        y = p2
        z = load - x - y
        ok = (z >= f.pmin[2]) & (z <= f.pmax[2])
        if not ok.any():
            continue
        P = np.stack([np.full(ok.sum(), x), y[ok], z[ok]])
        c = (f.a[:, None] + f.b[:, None] * P + f.c[:, None] * P**2).sum(axis=0)
        k = int(np.argmin(c))
        if c[k] < best[0]:
            best = (float(c[k]), P[:, k])
    return best


def test_symmetric_pair():
    f = GeneratorFleet([0, 0], [0, 0], [1, 1], [0, 0], [10, 10])
    s = solve_lambda_iteration(DispatchProblem(f, 10.0))
    np.testing.assert_allclose(s.P_star, [5, 5], atol=1e-9)
    assert s.mu == pytest.approx(10.0, abs=1e-8)
    assert kkt_check(DispatchProblem(f, 10.0), [5.0, 5.0], 0.1).ok


def test_three_units_against_grid():
    f = GeneratorFleet([0, 0, 0], [1, 2, 3], [1, 1, 1], [0, 0, 0], [10, 10, 10])
    p = DispatchProblem(f, 6.0)
    s = solve_lambda_iteration(p)
    grid_cost, grid_P = grid_minimum_3(f, 6.0)
    np.testing.assert_allclose(s.P_star, [2.5, 2.0, 1.5], atol=1e-9)
    assert s.cost <= grid_cost + 1e-12
    assert s.cost == pytest.approx(grid_cost, abs=1e-5)
    np.testing.assert_allclose(grid_P, s.P_star, atol=2e-3)


@pytest.mark.parametrize("seed", range(4))
def test_random_three_unit_grid(seed):
    p = random_problem(np.random.default_rng(seed), 3)
    s = solve_lambda_iteration(p)
    grid_cost, _ = grid_minimum_3(p.fleet, p.total_load, step=2e-3)
    # grid optimum within one cell of the true optimum: cost gap <= step * max gradient * n
    lip = float(np.abs(p.fleet.gradient(p.fleet.pmax)).max())
    assert s.cost <= grid_cost + 1e-12
    assert grid_cost - s.cost <= 2e-3 * lip * 3


@pytest.mark.parametrize("seed", range(100))
def test_random_problems_against_qp(seed):
    rng = np.random.default_rng(1000 + seed)
    p = random_problem(rng, int(rng.integers(1, 7)), kind="ieee" if seed % 2 else "desk")
    s = solve_lambda_iteration(p)
    x, val = qp_reference(p)
    assert s.cost <= val + 1e-7 * max(1.0, abs(val))
    assert abs(s.P_star.sum() - p.total_load) <= p.default_tol()
    assert np.all(s.P_star >= p.fleet.pmin) and np.all(s.P_star <= p.fleet.pmax)
    np.testing.assert_allclose(s.P_star, x, atol=1e-5 * max(1.0, p.total_load))
    assert kkt_check(p, s.P_star, 0.5 * 1.0 / (2 * np.abs(p.fleet.gradient(p.fleet.pmax)).max())).ok


def test_infeasible_loads():
    f = GeneratorFleet([0, 0], [1, 1], [1, 1], [1, 1], [2, 2])
    for load in (2.0, 4.0, 10.0):
        with pytest.raises(InfeasibleDispatch):
            DispatchProblem(f, load)


def test_flat_tie_split_proportional():
    f = GeneratorFleet([0, 0, 0], [5, 5, 1], [0, 0, 0], [0, 0, 0], [10, 30, 4])
    s = solve_lambda_iteration(DispatchProblem(f, 24.0))
    # the cheap unit is full, the two tied units share the remaining 20 as 10:30
    np.testing.assert_allclose(s.P_star, [5.0, 15.0, 4.0], atol=1e-9)
    assert s.mu == pytest.approx(5.0)


def test_bundled_fleet_optima():
    f = load_fleet("ieee118_54units")
    for load, cost in ((4600.0, 98897.42537198022), (4200.0, 88077.61845366181)):
        p = DispatchProblem(f, load)
        s = solve_lambda_iteration(p)
        assert s.cost == pytest.approx(cost, rel=1e-12)
        assert kkt_check(p, s.P_star, EPS).ok
        _, val = qp_reference(p)
        assert s.cost == pytest.approx(val, rel=1e-9)


@pytest.mark.parametrize("name", BUNDLED)
def test_oracle_round_trip_on_bundled_scenarios(name):
    cfg = load_config(name)
    for t in (0.0, cfg.T):
        p = DispatchProblem(cfg.fleet.subset(cfg.graph.vertices), float(cfg.load.value(t)))
        assert kkt_check(p, solve_lambda_iteration(p).P_star, cfg.params.epsilon).ok


def test_kkt_rejects_perturbed_optimum():
    f = GeneratorFleet([0, 0, 0], [1, 1, 1], [1, 2, 3], [0, 0, 0], [10, 10, 10])
    p = DispatchProblem(f, 9.0)
    P = solve_lambda_iteration(p).P_star.copy()
    P[0] += 0.1
    P[1] -= 0.1
    rep = kkt_check(p, P, 0.01)
    assert not rep.ok
    assert "price_gap" in rep.violations
    assert rep.mu_witness is None


def test_kkt_rejects_load_residual():
    f = GeneratorFleet([0, 0], [0, 0], [1, 1], [0, 0], [10, 10])
    rep = kkt_check(DispatchProblem(f, 10.0), [5.0, 5.1], 0.1)
    assert not rep.ok and "load_residual" in rep.violations


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100))
def test_kkt_invariant_under_constant_shift(seed, shift):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, int(rng.integers(2, 7)))
    s = solve_lambda_iteration(p)
    f = p.fleet
    g = GeneratorFleet(f.a + shift, f.b, f.c, f.pmin, f.pmax, f.ids)
    for P in (s.P_star, s.P_star + rng.normal(scale=0.05, size=f.n)):
        assert kkt_check(p, P, 0.01).ok == kkt_check(DispatchProblem(g, p.load), P, 0.01).ok


def test_distance_cases():
    f = GeneratorFleet([0, 0, 0], [1, 2, 3], [1, 1, 1], [0, 0, 0], [10, 10, 10])
    p = DispatchProblem(f, 6.0)
    s = solve_lambda_iteration(p)
    assert distance_to_solution_set(p, s.P_star) == pytest.approx(0.0, abs=1e-9)
    d = 0.2 * np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    assert distance_to_solution_set(p, s.P_star + d) == pytest.approx(0.2, rel=1e-9)


def test_distance_to_tied_segment():
    # two identical linear units: optimal set is {x + y = 6, 0 <= x, y <= 5}
    f = GeneratorFleet([0, 0], [1, 1], [0, 0], [0, 0], [5, 5])
    p = DispatchProblem(f, 6.0)
    # closed-form projection onto the segment from (1, 5) to (5, 1)
    for P in ([3.0, 3.0], [0.0, 0.0], [6.0, 2.0], [-1.0, 9.0]):
        x = np.asarray(P)
        t = np.clip((x[0] - x[1] + 6.0) / 2.0, 1.0, 5.0)
        proj = np.array([t, 6.0 - t])
        assert distance_to_solution_set(p, x) == pytest.approx(np.linalg.norm(x - proj), abs=1e-9)
