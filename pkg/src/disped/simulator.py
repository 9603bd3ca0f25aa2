"""Fixed-step simulation of the dispatch dynamics with load signals and
generator addition/deletion events.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import _kernel
from .costs import GeneratorFleet, epsilon_bound
from .dynamics import AlgorithmParams, MismatchModel, SimState, check_param_condition
from .graph import GraphError, WeightedDigraph, add_vertex, build_laplacian, remove_vertices, \
    require_connected_balanced

log = logging.getLogger(__name__)

V_DRIFT_FATAL = 1e-6


class ConservationError(RuntimeError):
    """The auxiliary state left the zero-sum subspace: an implementation bug, not a modelling issue."""


@dataclass(frozen=True)
class LoadSignal:
    """Total load ``P_l(t)``.

    kinds and their ``params``:

    - ``constant``: ``value``
    - ``piecewise_constant``: ``steps`` = ``[[t0, value0], [t1, value1], ...]`` with ``t0 = 0``
    - ``sinusoid``: ``base``, ``amp``, ``omega``
    - ``decaying_bursts``: ``base``, ``amp``, ``omega``, ``decay``, ``cycles``, ``starts``.
      Burst ``k`` is ``amp * decay**k * sin^2(pi s / w) * sin(omega s)`` for
      ``s = t - starts[k]`` in ``[0, w]``, ``w = 2 pi cycles / omega``; the
      window makes the signal twice continuously differentiable and leaves the
      load exactly constant between bursts.
    - ``table``: ``samples`` = ``[[t, value], ...]``, linearly interpolated.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise_constant", "sinusoid", "decaying_bursts", "table"):
            raise ValueError(f"unknown load kind {self.kind!r}")
        if self.kind == "piecewise_constant":
            ts = [s[0] for s in self.params["steps"]]
            if ts[0] != 0 or any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("piecewise_constant steps must start at t=0 and increase")
        if self.kind == "decaying_bursts":
            st = list(self.params["starts"])
            if any(b < a + self.burst_width for a, b in zip(st, st[1:])):
                raise ValueError("bursts overlap")

    @classmethod
    def constant(cls, value: float) -> "LoadSignal":
        return cls("constant", {"value": float(value)})

    @property
    def burst_width(self) -> float:
        p = self.params
        return 2.0 * math.pi * p["cycles"] / p["omega"]

    def value(self, t, left: bool = False):
        """Load at ``t``; ``left=True`` takes left limits at jumps."""
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full(t.shape, p["value"]) if t.ndim else float(p["value"])
        if self.kind == "piecewise_constant":
            ts = np.array([s[0] for s in p["steps"]])
            vs = np.array([s[1] for s in p["steps"]], dtype=float)
            idx = np.searchsorted(ts, t, side="left" if left else "right") - 1
            out = vs[np.clip(idx, 0, len(vs) - 1)]
            return out if t.ndim else float(out)
        if self.kind == "sinusoid":
            out = p["base"] + p["amp"] * np.sin(p["omega"] * t)
            return out if t.ndim else float(out)
        if self.kind == "table":
            s = np.asarray(p["samples"], dtype=float)
            out = np.interp(t, s[:, 0], s[:, 1])
            return out if t.ndim else float(out)
        out = np.full(t.shape, float(p["base"]))
        w = self.burst_width
        for k, t0 in enumerate(p["starts"]):
            s = t - t0
            on = (s >= 0) & (s <= w)
            amp = p["amp"] * p["decay"] ** k
            out = out + np.where(on, amp * np.sin(np.pi * s / w) ** 2 * np.sin(p["omega"] * s), 0.0)
        return out if t.ndim else float(out)

    def derivative_bounds(self) -> tuple[float, float] | None:
        """``(d1, d2)`` bounding ``|dP_l/dt|`` and ``|d2P_l/dt2|``, or ``None`` if not twice differentiable."""
        p = self.params
        if self.kind == "constant":
            return 0.0, 0.0
        if self.kind == "sinusoid":
            a, w = abs(p["amp"]), p["omega"]
            return a * w, a * w * w
        if self.kind == "decaying_bursts":
            # derivatives of sin^2(pi s/W) sin(w s), bounded term by term
            a, w, k = abs(p["amp"]), p["omega"], math.pi / self.burst_width
            return a * (k + w), a * (2 * k * k + 2 * k * w + w * w)
        return None

    def jumps(self) -> list[float]:
        if self.kind == "piecewise_constant":
            return [float(s[0]) for s in self.params["steps"][1:]]
        return []

    def constant_intervals(self, T: float) -> list[tuple[float, float]]:
        """Maximal sub-intervals of ``[0, T]`` on which the load is constant."""
        if self.kind == "constant":
            return [(0.0, T)]
        if self.kind == "piecewise_constant":
            ts = [float(s[0]) for s in self.params["steps"]] + [T]
            return [(a, min(b, T)) for a, b in zip(ts, ts[1:]) if a < T]
        if self.kind == "decaying_bursts":
            out, cur = [], 0.0
            for t0 in self.params["starts"]:
                if t0 > cur:
                    out.append((cur, min(t0, T)))
                cur = t0 + self.burst_width
            if cur < T:
                out.append((cur, T))
            return [(a, b) for a, b in out if a < b]
        return []

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d) -> "LoadSignal":
        d = dict(d)
        return cls(d.pop("kind"), d)


@dataclass(frozen=True)
class Event:
    t: float
    kind: Literal["add", "remove"]
    unit: int
    edges: tuple | None = None
    edges_from: WeightedDigraph | None = None
    P_init: float | None = None


@dataclass(frozen=True)
class EventSchedule:
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        ts = [e.t for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("event times must be non-decreasing")
        for e in self.events:
            if e.kind not in ("add", "remove"):
                raise ValueError(f"unknown event kind {e.kind!r}")

    def times(self) -> list[float]:
        return sorted(set(e.t for e in self.events))

    def at(self, t: float) -> list[Event]:
        return [e for e in self.events if e.t == t]


@dataclass
class Trajectory:
    """Sampled run. Per-unit columns follow ``unit_ids``; inactive units hold NaN."""

    unit_ids: tuple[int, ...]
    times: np.ndarray
    P: np.ndarray
    z: np.ndarray
    v: np.ndarray
    load: np.ndarray
    total_cost: np.ndarray
    segments: list[dict]
    event_log: list[dict]
    box_violation_max: float = 0.0

    @property
    def mismatch(self) -> np.ndarray:
        return np.nansum(self.P, axis=1) - self.load

    @property
    def sum_v(self) -> np.ndarray:
        return np.nansum(self.v, axis=1)

    @property
    def sum_z(self) -> np.ndarray:
        return np.nansum(self.z, axis=1)

    def final_state(self) -> SimState:
        act = self.segments[-1]["active"]
        cols = [self.unit_ids.index(u) for u in act]
        return SimState(self.P[-1, cols], self.z[-1, cols], self.v[-1, cols], act)

    def rows_between(self, t0: float, t1: float, segment: int | None = None) -> np.ndarray:
        idx = np.arange(self.times.size)
        if segment is not None:
            s = self.segments[segment]
            idx = idx[s["row_start"]:s["row_stop"]]
        t = self.times[idx]
        return idx[(t >= t0) & (t <= t1)]


def apply_tinv_remove(state: SimState, graph: WeightedDigraph, unit: int,
                      exclude: Sequence[int] = ()) -> tuple[SimState, WeightedDigraph]:
    """Unit ``unit`` leaves: its auxiliary value goes to its lowest-id surviving in-neighbor."""
    if unit not in state.active:
        raise GraphError(f"unit {unit} is not active")
    skip = set(exclude) | {unit}
    recipients = [w for w in graph.in_neighbors(unit) if w not in skip]
    if not recipients:
        raise GraphError(f"unit {unit} has no surviving in-neighbor to take its token")
    k, j = state.active.index(unit), state.active.index(recipients[0])
    v = state.v.copy()
    v[j] += v[k]
    keep = [i for i in range(state.n) if i != k]
    new = SimState(state.P[keep], state.z[keep], v[keep], tuple(state.active[i] for i in keep))
    return new, remove_vertices(graph, [unit])


def apply_tinv_add(state: SimState, graph: WeightedDigraph, unit: int, edges,
                   P_init: float) -> tuple[SimState, WeightedDigraph]:
    """Unit ``unit`` joins with ``P = P_init``, ``z = 0`` and ``v = 0``."""
    if unit in state.active:
        raise GraphError(f"unit {unit} is already active")
    g2 = add_vertex(graph, unit, edges)
    active = tuple(sorted(state.active + (unit,)))
    k = active.index(unit)
    P = np.insert(state.P, k, P_init)
    z = np.insert(state.z, k, 0.0)
    v = np.insert(state.v, k, 0.0)
    return SimState(P, z, v, active), g2


def _edges_for(event: Event, graph: WeightedDigraph) -> list:
    if event.edges is not None:
        return list(event.edges)
    if event.edges_from is None:
        raise ValueError(f"add event for unit {event.unit} has no edges")
    live = set(graph.vertices) | {event.unit}
    return [e for e in event.edges_from.incident_edges(event.unit) if e[0] in live and e[1] in live]


def apply_event_batch(state: SimState, graph: WeightedDigraph, fleet: GeneratorFleet,
                      params: AlgorithmParams, batch: Sequence[Event]):
    """Removals (ascending id) then additions (ascending id); the resulting graph is re-verified."""
    removals = sorted(e.unit for e in batch if e.kind == "remove")
    adds = sorted((e for e in batch if e.kind == "add"), key=lambda e: e.unit)
    logs = []
    for u in removals:
        state, graph = apply_tinv_remove(state, graph, u, exclude=removals)
        logs.append({"kind": "remove", "unit": u})
    midpoint = dict(zip(fleet.ids, fleet.midpoint()))
    for e in adds:
        p0 = midpoint[e.unit] if e.P_init is None else e.P_init
        state, graph = apply_tinv_add(state, graph, e.unit, _edges_for(e, graph), p0)
        logs.append({"kind": "add", "unit": e.unit, "P_init": float(p0)})
    bundle = build_laplacian(graph)
    require_connected_balanced(bundle, "graph after events")
    if params.load_mode == "single_bus" and params.r not in state.active:
        new_r = state.active[0]
        logs.append({"kind": "reassign_r", "from": params.r, "to": new_r})
        params = params.with_gains(r=new_r)
    return state, graph, params, logs


def _drive(params: AlgorithmParams, active: tuple[int, ...], shares: dict | None) -> np.ndarray:
    if params.load_mode == "single_bus":
        e = np.zeros(len(active))
        e[active.index(params.r)] = 1.0
        return e
    w = np.array([shares.get(u, 0.0) for u in active], dtype=float) if shares else np.ones(len(active))
    if w.sum() <= 0:
        raise ValueError("bus load shares of the active units sum to zero")
    return w / w.sum()


def _check_conditions(graph, bundle, params, fleet_active, load_now, mode):
    if mode != "distributed" or graph.n < 2:
        return
    rep = check_param_condition(bundle, params)
    if not rep.ok:
        warnings.warn(
            f"gain condition not met on the current graph (lhs {rep.lhs:.4g} >= rhs {rep.rhs:.4g}); "
            "convergence is not guaranteed", RuntimeWarning, stacklevel=3)
    try:
        eb = epsilon_bound(fleet_active, load_now)
    except ValueError:
        return
    if params.epsilon >= eb:
        warnings.warn(f"epsilon {params.epsilon} is not below its bound {eb:.4g}", RuntimeWarning, stacklevel=3)


def integrate(fleet: GeneratorFleet, params: AlgorithmParams, graph: WeightedDigraph, load: LoadSignal,
              events: EventSchedule, init: SimState, dt: float, T: float,
              mode: Literal["centralized", "distributed"] = "distributed", record_every: int = 100,
              selection: Literal["sliding", "interior"] = "sliding", band_factor: float = 2.0,
              bus_shares: dict | None = None, check_conditions: bool = True) -> Trajectory:
    """Integrate the dynamics on ``[0, T]`` with classical RK4.

    The step grid is split at event times and load jumps; each piece uses the
    largest step ``<= dt`` that divides it evenly. Events are applied between
    steps, and the post-event state is recorded at the event time.
    """
    if not dt > 0 or not T > 0:
        raise ValueError("dt and T must be positive")
    if mode not in ("centralized", "distributed"):
        raise ValueError(f"unknown mode {mode!r}")
    if init.active != graph.vertices:
        raise ValueError("initial active set must equal the graph's vertex set")
    if mode == "centralized" and events.events:
        raise ValueError("events are only supported for the distributed dynamics")
    scale = max(1.0, float(np.abs(init.v).sum()))
    if mode == "distributed" and abs(init.v.sum()) > 1e-9 * scale:
        raise ValueError("initial auxiliary state must sum to zero")

    bundle = build_laplacian(graph)
    require_connected_balanced(bundle, "initial graph")
    cuts = sorted({t for t in events.times() + load.jumps() if 0 < t < T})
    edges_t = [0.0] + cuts + [float(T)]
    ids = fleet.ids
    col = {u: k for k, u in enumerate(ids)}
    state = init

    rows_t, rows_P, rows_z, rows_v, rows_l = [], [], [], [], []
    segments, event_log = [], []
    box_max = 0.0

    def push(times, P, z, v, loads, active):
        m = len(times)
        full = np.full((3, m, len(ids)), np.nan)
        cols = [col[u] for u in active]
        full[0][:, cols], full[1][:, cols], full[2][:, cols] = P, z, v
        rows_t.append(np.asarray(times, dtype=float))
        rows_P.append(full[0])
        rows_z.append(full[1])
        rows_v.append(full[2])
        rows_l.append(np.asarray(loads, dtype=float))

    nrows = 0
    for a, b in zip(edges_t, edges_t[1:]):
        if a > 0 and a in events.times():
            state, graph, params, logs = apply_event_batch(state, graph, fleet, params, events.at(a))
            for entry in logs:
                entry["t"] = a
            event_log.extend(logs)
            bundle = build_laplacian(graph)
        sub = fleet.subset(state.active)
        if check_conditions:
            _check_conditions(graph, bundle, params, sub, load.value(a), mode)

        nsteps = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / nsteps
        grid = a + 0.5 * h * np.arange(2 * nsteps + 1)
        pl = load.value(grid)
        pl[-1] = load.value(b, left=True)
        pl[0] = load.value(a)
        rec = np.unique(np.r_[np.arange(record_every, nsteps + 1, record_every), nsteps]).astype(np.int64)

        P = state.P.copy()
        z = state.z.copy()
        v = state.v.copy()
        n = P.size
        rP, rz, rv = (np.empty((rec.size, n)) for _ in range(3))
        _kernel.rk4_run(
            P, z, v, pl, _drive(params, state.active, bus_shares), np.ascontiguousarray(bundle.L),
            sub.b, sub.c, sub.pmin, sub.pmax, 1.0 / params.epsilon, params.nu1, params.nu2,
            params.alpha, params.beta, mode == "centralized", selection == "sliding", band_factor,
            h, nsteps, rec, rP, rz, rv,
        )
        push([a], state.P[None], state.z[None], state.v[None], [pl[0]], state.active)
        push(a + h * rec, rP, rz, rv, pl[2 * rec], state.active)
        box_max = max(box_max, float(np.max(np.maximum(rP - sub.pmax, 0) + np.maximum(sub.pmin - rP, 0))))
        segments.append({
            "t0": a, "t1": b, "active": state.active, "graph_n": graph.n, "dt": h, "steps": nsteps,
            "row_start": nrows, "row_stop": nrows + 1 + rec.size, "params": params,
        })
        nrows += 1 + rec.size
        state = SimState(P, z, v, state.active)
        drift = abs(v.sum())
        if mode == "distributed" and drift > V_DRIFT_FATAL:
            raise ConservationError(f"sum of auxiliary state drifted to {drift:.3e} by t={b}")

    times = np.concatenate(rows_t)
    Pm = np.vstack(rows_P)
    act = ~np.isnan(Pm)
    Pz = np.where(act, Pm, 0.0)
    cost = np.where(act, fleet.a + fleet.b * Pz + fleet.c * Pz * Pz, 0.0).sum(axis=1)
    log.debug("integrated %d segments, %d records", len(segments), times.size)
    return Trajectory(ids, times, Pm, np.vstack(rows_z), np.vstack(rows_v), np.concatenate(rows_l),
                      cost, segments, event_log, box_max)


@dataclass
class EnvelopeReport:
    passed: bool
    ratio_max: float
    t0: float
    t1: float
    samples: int


def mismatch_envelope_check(traj: Trajectory, model: MismatchModel, params: AlgorithmParams,
                            segment: tuple[float, float], seg_index: int | None = None,
                            atol: float | None = None, rtol: float = 1e-3) -> EnvelopeReport:
    """Compare the sampled aggregate mismatch with its exponential envelope.

    ``x(t) = (1'P - P_l, nu1 1'z)`` must satisfy
    ``|x(t)| <= c1 exp(-c2 (t - t0)) |x(t0)|`` on a constant-load, event-free
    stretch. ``atol`` is an absolute floor for floating-point resolution of
    ``1'P - P_l`` (default ``1e-9 max(1, P_l)``); the reported ratio is
    ``max |x(t)| / (envelope(t) + atol)``.
    """
    rows = traj.rows_between(segment[0], segment[1], seg_index)
    if rows.size == 0:
        raise ValueError(f"no samples in segment {segment}")
    x1 = traj.mismatch[rows]
    x2 = params.nu1 * traj.sum_z[rows]
    norm = np.hypot(x1, x2)
    t = traj.times[rows]
    if atol is None:
        atol = 1e-9 * max(1.0, float(np.abs(traj.load[rows]).max()))
    env = model.c1 * np.exp(-model.c2 * (t - t[0])) * norm[0]
    ratio = float(np.max(norm / (env + atol)))
    return EnvelopeReport(ratio <= 1.0 + rtol, ratio, float(t[0]), float(t[-1]), int(rows.size))


def constant_load_segments(traj: Trajectory, load: LoadSignal) -> list[tuple[int, float, float]]:
    """``(segment index, t0, t1)`` for every event-free stretch with constant load."""
    T = float(traj.times[-1])
    out = []
    for k, s in enumerate(traj.segments):
        for a, b in load.constant_intervals(T):
            lo, hi = max(a, s["t0"]), min(b, s["t1"])
            if hi > lo:
                out.append((k, lo, hi))
    return out


def run_until_stall(fleet: GeneratorFleet, params: AlgorithmParams, graph: WeightedDigraph, load: float,
                    init: SimState, dt: float, window: float = 10.0, rtol: float = 1e-10,
                    T_max: float = 5000.0, mode: Literal["centralized", "distributed"] = "distributed",
                    selection: Literal["sliding", "interior"] = "sliding") -> tuple[SimState, float]:
    """Integrate window by window until the allocation and the mismatch stop moving.

    Stops when, over one window, ``|P(t) - P(t - window)| <= rtol max(1, |P|)``
    and ``|1'P - P_l| <= rtol max(1, P_l)``; returns the state and the time reached.
    """
    sig = LoadSignal.constant(load)
    state, t = init, 0.0
    first = True
    while t < T_max:
        traj = integrate(fleet, params, graph, sig, EventSchedule(), state, dt, window, mode=mode,
                         record_every=10**9, selection=selection, check_conditions=first)
        first = False
        new = traj.final_state()
        t += window
        step = np.linalg.norm(new.P - state.P)
        state = new
        if step <= rtol * max(1.0, np.linalg.norm(new.P)) and \
                abs(new.P.sum() - load) <= rtol * max(1.0, abs(load)):
            break
    return state, t
