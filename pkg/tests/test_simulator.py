import numpy as np
import pytest

from disped.costs import GeneratorFleet, load_fleet
from disped.dynamics import AlgorithmParams, SimState, mismatch_model, tune_gains
from disped.graph import GraphError, WeightedDigraph, build_laplacian, remove_vertices, table1_graph
from disped.oracle import DispatchProblem, distance_to_solution_set, kkt_check, solve_lambda_iteration
from disped.simulator import (ConservationError, Event, EventSchedule, LoadSignal, apply_event_batch,
                              apply_tinv_add, apply_tinv_remove, constant_load_segments, integrate,
                              mismatch_envelope_check, run_until_stall)
from factories import desk_fleet, feasible_load, line_graph

DEFAULTS = AlgorithmParams()


def one_unit():
    f = GeneratorFleet([0], [1], [1], [0], [10], ids=(1,))
    return f, WeightedDigraph.from_edges(1, []), DEFAULTS.with_gains(r=1)


def test_single_unit_closed_form():
    f, g, params = one_unit()
    Pl, P0 = 6.0, 2.0
    traj = integrate(f, params, g, LoadSignal.constant(Pl), EventSchedule(), SimState.cold_start([P0], (1,)),
                     dt=1e-3, T=60.0, record_every=500)
    a, n1, n2 = params.alpha, params.nu1, params.nu2
    M = np.array([[0, n1, 0], [-n2, -a, -1], [0, 0, 0]], dtype=float)
    lam, V = np.linalg.eig(M)
    x0 = np.array([P0 - Pl, 0.0, 0.0])
    c = np.linalg.solve(V, x0)
    for k in range(0, traj.times.size, 7):
        x = (V @ (c * np.exp(lam * traj.times[k]))).real
        assert traj.P[k, 0] - Pl == pytest.approx(x[0], abs=1e-9)
        assert traj.z[k, 0] == pytest.approx(x[1], abs=1e-9)
    assert traj.P[-1, 0] == pytest.approx(Pl, abs=1e-3 * Pl)


def five_unit_case(seed=0):
    rng = np.random.default_rng(seed)
    f = desk_fleet(rng, 5)
    g = line_graph(5)
    params = tune_gains(build_laplacian(g), DEFAULTS.with_gains(epsilon=0.02, r=2))
    return f, g, params, feasible_load(rng, f), rng


def test_five_unit_line_converges_to_oracle():
    f, g, params, load, rng = five_unit_case()
    P0 = rng.uniform(f.pmin - 2, f.pmax + 2)
    state, T = run_until_stall(f, params, g, load, SimState.cold_start(P0, g.vertices), dt=1e-3)
    p = DispatchProblem(f, load)
    sol = solve_lambda_iteration(p)
    assert distance_to_solution_set(p, state.P, sol) <= 1e-6 * max(1.0, np.linalg.norm(sol.P_star))
    assert kkt_check(p, state.P, params.epsilon).ok
    assert abs(state.P.sum() - load) <= 1e-6 * load


def test_five_unit_envelope():
    f, g, params, load, rng = five_unit_case(1)
    traj = integrate(f, params, g, LoadSignal.constant(load), EventSchedule(),
                     SimState.cold_start(rng.uniform(f.pmin, f.pmax), g.vertices), dt=1e-3, T=20.0, record_every=10)
    rep = mismatch_envelope_check(traj, mismatch_model(params), params, (0.0, 20.0))
    assert rep.passed and rep.samples == traj.times.size


def test_envelope_zero_initial_mismatch():
    f, g, params, load, rng = five_unit_case(2)
    P0 = solve_lambda_iteration(DispatchProblem(f, load)).P_star
    traj = integrate(f, params, g, LoadSignal.constant(load), EventSchedule(), SimState.cold_start(P0, g.vertices),
                     dt=1e-3, T=2.0)
    assert mismatch_envelope_check(traj, mismatch_model(params), params, (0.0, 2.0)).passed
    with pytest.raises(ValueError):
        mismatch_envelope_check(traj, mismatch_model(params), params, (5.0, 6.0))


def test_centralized_mode_exponential_law():
    f, g, params, load, rng = five_unit_case(3)
    P0 = rng.uniform(f.pmin, f.pmax)
    traj = integrate(f, params, g, LoadSignal.constant(load), EventSchedule(), SimState.cold_start(P0, g.vertices),
                     dt=1e-3, T=5.0, mode="centralized", record_every=10)
    V = 0.5 * traj.mismatch**2
    np.testing.assert_allclose(V / V[0], np.exp(-2 * traj.times), rtol=1e-4)


def test_load_signal_kinds():
    pw = LoadSignal("piecewise_constant", {"steps": [[0, 4600], [150, 4200]]})
    assert pw.value(149.9) == 4600 and pw.value(150.0) == 4200 and pw.value(150.0, left=True) == 4600
    assert pw.jumps() == [150.0] and pw.constant_intervals(300) == [(0.0, 150.0), (150.0, 300.0)]
    sn = LoadSignal("sinusoid", {"base": 4300, "amp": 100, "omega": 0.05})
    assert sn.derivative_bounds() == pytest.approx((5.0, 0.25))
    t = np.linspace(0, 500, 20001)
    y = sn.value(t)
    assert np.abs(np.gradient(y, t)).max() <= 5.0 + 1e-3
    b = LoadSignal("decaying_bursts", {"base": 10, "amp": 2, "omega": 1.0, "decay": 0.5, "cycles": 2,
                                       "starts": [5, 30]})
    d1, d2 = b.derivative_bounds()
    t = np.linspace(0, 60, 600001)
    y = b.value(t)
    g1 = np.gradient(y, t)
    assert np.abs(g1).max() <= d1 and np.abs(np.gradient(g1, t)).max() <= d2 * (1 + 1e-3)
    assert b.value(4.999) == 10 and b.value(29.0) == 10
    assert [round(x, 6) for x in b.constant_intervals(60)[0]] == [0.0, 5.0]
    tab = LoadSignal("table", {"samples": [[0, 1], [10, 3]]})
    assert tab.value(5.0) == 2.0 and tab.derivative_bounds() is None
    assert LoadSignal.from_dict(sn.to_dict()) == sn
    with pytest.raises(ValueError):
        LoadSignal("square", {})
    with pytest.raises(ValueError):
        LoadSignal("piecewise_constant", {"steps": [[1, 3]]})


def test_event_schedule_validation():
    with pytest.raises(ValueError):
        EventSchedule((Event(2.0, "remove", 1), Event(1.0, "remove", 2)))
    with pytest.raises(ValueError):
        EventSchedule((Event(1.0, "pause", 1),))
    s = EventSchedule((Event(1.0, "remove", 1), Event(1.0, "add", 2), Event(3.0, "remove", 3)))
    assert s.times() == [1.0, 3.0] and len(s.at(1.0)) == 2


def ghat_state(rng):
    g = table1_graph("Ghat")
    v = rng.normal(size=g.n)
    v -= v.mean()
    return SimState(rng.uniform(10, 100, g.n), rng.normal(size=g.n), v, g.vertices), g


def test_tinv_remove_conserves_and_hands_token_to_lowest_in_neighbor():
    rng = np.random.default_rng(0)
    s, g = ghat_state(rng)
    s2, g2 = apply_tinv_remove(s, g, 10)
    assert abs(s2.v.sum() - s.v.sum()) <= 1e-14
    recipient = g.in_neighbors(10)[0]
    assert recipient == 5
    k_old, k_new = s.active.index(recipient), s2.active.index(recipient)
    assert s2.v[k_new] == s.v[k_old] + s.v[s.active.index(10)]
    assert g2 == remove_vertices(g, [10]) and 10 not in s2.active
    with pytest.raises(GraphError):
        apply_tinv_remove(s2, g2, 10)


def test_tinv_zero_token_changes_nothing():
    rng = np.random.default_rng(1)
    s, g = ghat_state(rng)
    v = s.v.copy()
    v[s.active.index(3)] = 0.0
    v[s.active.index(1)] -= v.sum()
    s = SimState(s.P, s.z, v, s.active)
    s2, _ = apply_tinv_remove(s, g, 3)
    rest = [u for u in s.active if u != 3]
    np.testing.assert_array_equal(s2.v, v[[s.active.index(u) for u in rest]])


def test_tinv_add_then_remove_round_trip():
    rng = np.random.default_rng(2)
    s, g = ghat_state(rng)
    s1, g1 = apply_tinv_remove(s, g, 20)
    s2, g2 = apply_tinv_add(s1, g1, 20, g.incident_edges(20), 42.0)
    assert g2 == g and s2.active == s.active
    k = s2.active.index(20)
    assert s2.P[k] == 42.0 and s2.z[k] == 0.0 and s2.v[k] == 0.0
    s3, g3 = apply_tinv_remove(s2, g2, 20)
    assert abs(s3.v.sum()) <= 1e-13 and g3 == g1
    with pytest.raises(GraphError):
        apply_tinv_add(s2, g2, 20, [], 1.0)


def test_event_batches_give_reference_graphs():
    rng = np.random.default_rng(3)
    s, g = ghat_state(rng)
    fleet = load_fleet("ieee118_54units")
    ghat = table1_graph("Ghat")
    first = [Event(100.0, "remove", u) for u in (4, 11, 25, 45)]
    s1, g1, p1, _ = apply_event_batch(s, g, fleet, DEFAULTS, first)
    assert g1 == table1_graph("Gi") and abs(s1.v.sum()) <= 1e-12
    second = [Event(200.0, "add", 11, edges_from=ghat), Event(200.0, "add", 45, edges_from=ghat),
              Event(200.0, "remove", 27)]
    s2, g2, p2, log = apply_event_batch(s1, g1, fleet, p1, second)
    assert g2 == table1_graph("Gf") and abs(s2.v.sum()) <= 1e-12
    assert [e["kind"] for e in log] == ["remove", "add", "add"]
    mid = dict(zip(fleet.ids, fleet.midpoint()))
    assert s2.P[s2.active.index(11)] == mid[11]


def test_r_reassigned_when_removed():
    rng = np.random.default_rng(4)
    s, g = ghat_state(rng)
    s1, _, p1, log = apply_event_batch(s, g, load_fleet("ieee118_54units"), DEFAULTS, [Event(1.0, "remove", 3)])
    assert p1.r == 1 and log[-1] == {"kind": "reassign_r", "from": 3, "to": 1}


def test_disconnecting_event_rejected():
    f, g, params, load, rng = five_unit_case()
    s = SimState.cold_start(f.midpoint(), g.vertices)
    with pytest.raises(GraphError):
        apply_event_batch(s, g, f, params, [Event(1.0, "remove", 3)])


def test_events_in_integration_conserve_v_and_snap_to_grid():
    f, g, params, load, rng = five_unit_case(5)
    ev = EventSchedule((Event(0.7345, "remove", 5), Event(1.5, "add", 5, edges=((4, 5, 1.0), (5, 4, 1.0)))))
    traj = integrate(f, params, g, LoadSignal.constant(load), ev, SimState.cold_start(f.midpoint(), g.vertices),
                     dt=1e-3, T=3.0, record_every=10)
    assert np.abs(traj.sum_v).max() <= 1e-9
    assert [s["t0"] for s in traj.segments] == [0.0, 0.7345, 1.5]
    mid = traj.segments[1]
    assert mid["active"] == (1, 2, 3, 4)
    rows = slice(mid["row_start"], mid["row_stop"])
    assert np.isnan(traj.P[rows, 4]).all()
    assert traj.times[mid["row_start"]] == 0.7345
    # sampling interval inside each segment never exceeds the requested step
    assert all(s["dt"] <= 1e-3 + 1e-15 for s in traj.segments)


def test_integrate_argument_errors():
    f, g, params, load, rng = five_unit_case()
    s = SimState.cold_start(f.midpoint(), g.vertices)
    sig = LoadSignal.constant(load)
    with pytest.raises(ValueError):
        integrate(f, params, g, sig, EventSchedule(), s, dt=0.0, T=1.0)
    bad = SimState(s.P, s.z, np.ones(5), s.active)
    with pytest.raises(ValueError):
        integrate(f, params, g, sig, EventSchedule(), bad, dt=1e-3, T=1.0)
    with pytest.raises(ValueError):
        integrate(f, params, g, sig, EventSchedule((Event(0.5, "remove", 1),)), s, dt=1e-3, T=1.0, mode="centralized")
    with pytest.raises(ValueError):
        integrate(f, params, remove_vertices(g, [5]), sig, EventSchedule(), s, dt=1e-3, T=1.0)


def test_gain_condition_violation_warns_but_runs():
    f, g, params, load, rng = five_unit_case()
    s = SimState.cold_start(f.midpoint(), g.vertices)
    with pytest.warns(RuntimeWarning, match="gain condition"):
        integrate(f, params.with_gains(beta=1e-3), g, LoadSignal.constant(load), EventSchedule(), s, dt=1e-3, T=0.1)


def test_conservation_error_is_fatal(monkeypatch):
    f, g, params, load, rng = five_unit_case()
    s = SimState.cold_start(f.midpoint(), g.vertices)
    from disped import _kernel
    real = _kernel.rk4_run

    def leaky(P, z, v, *args):
        real(P, z, v, *args)
        v += 1e-3

    monkeypatch.setattr(_kernel, "rk4_run", leaky)
    with pytest.raises(ConservationError):
        integrate(f, params, g, LoadSignal.constant(load), EventSchedule(), s, dt=1e-3, T=0.1)


def test_integration_is_deterministic():
    f, g, params, load, rng = five_unit_case(6)
    s = SimState.cold_start(rng.uniform(f.pmin - 1, f.pmax + 1), g.vertices)
    sig = LoadSignal("piecewise_constant", {"steps": [[0, load], [1.0, load * 0.95]]})
    ev = EventSchedule((Event(1.3, "remove", 5),))
    a = integrate(f, params, g, sig, ev, s, dt=1e-3, T=2.0, record_every=7)
    b = integrate(f, params, g, sig, ev, s, dt=1e-3, T=2.0, record_every=7)
    for x, y in ((a.P, b.P), (a.z, b.z), (a.v, b.v), (a.times, b.times)):
        assert x.tobytes() == y.tobytes()


def test_constant_load_segments_split_at_events_and_jumps():
    f, g, params, load, rng = five_unit_case(7)
    sig = LoadSignal("piecewise_constant", {"steps": [[0, load], [1.0, load * 0.95]]})
    ev = EventSchedule((Event(1.5, "remove", 5),))
    traj = integrate(f, params, g, sig, ev, SimState.cold_start(f.midpoint(), g.vertices), dt=1e-3, T=2.0)
    assert constant_load_segments(traj, sig) == [(0, 0.0, 1.0), (1, 1.0, 1.5), (2, 1.5, 2.0)]


def test_mismatch_column_recomputable():
    f, g, params, load, rng = five_unit_case(8)
    sig = LoadSignal("sinusoid", {"base": load, "amp": 0.3, "omega": 2.0})
    traj = integrate(f, params, g, sig, EventSchedule(), SimState.cold_start(f.midpoint(), g.vertices),
                     dt=1e-3, T=2.0, record_every=25)
    np.testing.assert_allclose(traj.mismatch, np.nansum(traj.P, axis=1) - sig.value(traj.times), atol=1e-12)
    c = [f.a.sum() + f.b @ P + f.c @ P**2 for P in traj.P]
    np.testing.assert_allclose(traj.total_cost, c, rtol=1e-12)
