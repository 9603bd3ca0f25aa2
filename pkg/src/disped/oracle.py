"""Centralized dispatch oracle: lambda-iteration solver and KKT certificate.

Independent of the network dynamics on purpose; every trajectory test
compares against these results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import GeneratorFleet, PenaltyCost, cost_value, penalty_subgradient_interval

MAX_BISECTIONS = 200


class InfeasibleDispatch(ValueError):
    pass


class OracleDidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class DispatchProblem:
    """Fleet plus load. ``load`` is a total (MW) or a per-unit bus-load vector."""

    fleet: GeneratorFleet
    load: float | np.ndarray

    def __post_init__(self):
        load = np.asarray(self.load, dtype=float)
        if load.ndim == 1 and load.size != self.fleet.n:
            raise ValueError("per-unit load vector must match the fleet size")
        lo, hi = float(self.fleet.pmin.sum()), float(self.fleet.pmax.sum())
        if not lo < self.total_load < hi:
            raise InfeasibleDispatch(
                f"load {self.total_load} outside the open feasible range ({lo}, {hi})"
            )

    @property
    def total_load(self) -> float:
        return float(np.sum(self.load))

    def default_tol(self) -> float:
        return 1e-9 * max(1.0, abs(self.total_load))


@dataclass(frozen=True)
class DispatchSolution:
    P_star: np.ndarray
    mu: float
    cost: float


def unit_response(fleet: GeneratorFleet, mu: float) -> np.ndarray:
    """Generation each unit offers at marginal price ``mu`` (flat units sit at a limit)."""
    out = np.empty(fleet.n)
    pos = fleet.c > 0
    out[pos] = np.clip((mu - fleet.b[pos]) / (2.0 * fleet.c[pos]), fleet.pmin[pos], fleet.pmax[pos])
    flat = ~pos
    out[flat] = np.where(mu > fleet.b[flat], fleet.pmax[flat], fleet.pmin[flat])
    return out


def _price_bracket(fleet: GeneratorFleet) -> tuple[float, float]:
    g_lo = fleet.gradient(fleet.pmin)
    g_hi = fleet.gradient(fleet.pmax)
    return float(g_lo.min()) - 1.0, float(g_hi.max()) + 1.0


def solve_lambda_iteration(p: DispatchProblem, tol: float | None = None) -> DispatchSolution:
    """Bisection on the common marginal price ``mu``.

    Flat units (``c = 0``) whose price equals ``mu`` absorb the remaining load
    in proportion to their capacity ranges.
    """
    fleet, target = p.fleet, p.total_load
    tol = p.default_tol() if tol is None else tol
    lo, hi = _price_bracket(fleet)
    P = mu = None
    for _ in range(MAX_BISECTIONS):
        mu = 0.5 * (lo + hi)
        P = unit_response(fleet, mu)
        resid = P.sum() - target
        if abs(resid) <= tol:
            break
        if resid > 0:
            hi = mu
        else:
            lo = mu
        if hi - lo <= 4 * np.spacing(max(abs(lo), abs(hi), 1.0)):
            P, mu = _resolve_flat_tie(fleet, target, lo, hi)
            break
    else:
        P, mu = _resolve_flat_tie(fleet, target, lo, hi)

    P = _polish(fleet, P, mu, target)
    if abs(P.sum() - target) > tol:
        raise OracleDidNotConverge(
            f"lambda iteration left residual {P.sum() - target:.3e} (tol {tol:.3e})"
        )
    return DispatchSolution(P, float(mu), cost_value(fleet, P))


def _resolve_flat_tie(fleet: GeneratorFleet, target: float, lo: float, hi: float):
    mu = 0.5 * (lo + hi)
    tied = (fleet.c == 0) & (fleet.b >= lo - 1e-12 * max(1.0, abs(lo))) & (fleet.b <= hi + 1e-12 * max(1.0, abs(hi)))
    if not tied.any():
        raise OracleDidNotConverge("price bracket collapsed without meeting the load")
    mu = float(fleet.b[tied].mean())
    P = unit_response(fleet, mu)
    P[tied] = fleet.pmin[tied]
    rest = target - P.sum()
    span = fleet.pmax[tied] - fleet.pmin[tied]
    if span.sum() <= 0 or rest < 0 or rest > span.sum():
        raise OracleDidNotConverge("flat-cost tie cannot absorb the residual load")
    P[tied] += rest * span / span.sum()
    return P, mu


def _polish(fleet: GeneratorFleet, P: np.ndarray, mu: float, target: float) -> np.ndarray:
    # one exact Newton step on the active set: response is linear in mu there
    free = (fleet.c > 0) & (P > fleet.pmin) & (P < fleet.pmax)
    if not free.any():
        return P
    slope = float(np.sum(1.0 / (2.0 * fleet.c[free])))
    mu2 = mu - (P.sum() - target) / slope
    Q = P.copy()
    Q[free] = (mu2 - fleet.b[free]) / (2.0 * fleet.c[free])
    if np.all(Q[free] >= fleet.pmin[free]) and np.all(Q[free] <= fleet.pmax[free]) and \
            abs(Q.sum() - target) <= abs(P.sum() - target):
        return Q
    return P


@dataclass
class KKTReport:
    ok: bool
    mu_witness: float | None
    violations: dict = field(default_factory=dict)


def kkt_check(p: DispatchProblem, P, epsilon: float, tol: float | None = None) -> KKTReport:
    """Certify ``P`` as an optimizer of the penalized problem.

    ``tol`` bounds the load residual, snaps units that close to a limit onto
    it, and widens every generalized-gradient interval.
    """
    P = np.asarray(P, dtype=float)
    tol = p.default_tol() if tol is None else tol
    resid = float(P.sum() - p.total_load)
    lo, hi = penalty_subgradient_interval(PenaltyCost(p.fleet, epsilon), P, atol=tol)
    lo_max, hi_min = float(lo.max()) - tol, float(hi.min()) + tol
    gap = lo_max - hi_min
    violations = {}
    load_ok = abs(resid) <= tol
    price_ok = gap <= 0
    if not load_ok:
        violations["load_residual"] = resid
    if not price_ok:
        violations["price_gap"] = gap
        violations["binding_units"] = (
            p.fleet.ids[int(np.argmax(lo))],
            p.fleet.ids[int(np.argmin(hi))],
        )
    mu = 0.5 * (lo_max + hi_min) if price_ok else None
    return KKTReport(load_ok and price_ok, mu, violations)


def _project_box_hyperplane(x, lo, hi, total, tol=1e-13) -> np.ndarray:
    """Euclidean projection onto ``{y : lo <= y <= hi, sum(y) = total}``."""
    if lo.size == 0:
        return x.copy()
    a, b = float((x - hi).min()), float((x - lo).max())
    for _ in range(MAX_BISECTIONS):
        tau = 0.5 * (a + b)
        s = np.clip(x - tau, lo, hi).sum()
        if s > total:
            a = tau
        else:
            b = tau
        if b - a <= tol * max(1.0, abs(tau)):
            break
    return np.clip(x - 0.5 * (a + b), lo, hi)


def distance_to_solution_set(p: DispatchProblem, P, sol: DispatchSolution | None = None) -> float:
    """Euclidean distance from ``P`` to the set of optimal allocations.

    With strictly convex costs the set is the single point ``P*``. Flat
    units priced exactly at ``mu`` may take any split of their share, which
    makes the set a box slice; the distance then comes from projecting onto it.
    """
    P = np.asarray(P, dtype=float)
    sol = solve_lambda_iteration(p) if sol is None else sol
    fleet = p.fleet
    tied = (fleet.c == 0) & np.isclose(fleet.b, sol.mu, rtol=1e-9, atol=1e-12)
    d = P - sol.P_star
    if not tied.any():
        return float(np.linalg.norm(d))
    share = float(sol.P_star[tied].sum())
    proj = _project_box_hyperplane(P[tied], fleet.pmin[tied], fleet.pmax[tied], share)
    return float(np.sqrt(np.sum(d[~tied] ** 2) + np.sum((P[tied] - proj) ** 2)))
