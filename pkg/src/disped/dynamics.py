"""Vector fields of the centralized and distributed dispatch dynamics, the
aggregate mismatch model, gain conditions and robustness bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .costs import PenaltyCost, penalty_subgradient_selection
from .graph import GraphBounds, LaplacianBundle, spectral_lower_bound, spectral_upper_bound
from .oracle import DispatchProblem


@dataclass(frozen=True)
class AlgorithmParams:
    alpha: float = 10.0
    beta: float = 40.0
    nu1: float = 1.0
    nu2: float = 1.3
    epsilon: float = 0.0086
    r: int = 3
    load_mode: Literal["single_bus", "distributed_bus"] = "single_bus"

    def __post_init__(self):
        for name in ("alpha", "beta", "nu1", "nu2", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.load_mode not in ("single_bus", "distributed_bus"):
            raise ValueError(f"unknown load mode {self.load_mode!r}")

    def with_gains(self, **kw) -> "AlgorithmParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class SimState:
    """Network state; arrays are aligned with the sorted ``active`` unit ids."""

    P: np.ndarray
    z: np.ndarray
    v: np.ndarray
    active: tuple[int, ...]

    def __post_init__(self):
        active = tuple(int(u) for u in self.active)
        if list(active) != sorted(set(active)):
            raise ValueError("active ids must be sorted and unique")
        object.__setattr__(self, "active", active)
        for name in ("P", "z", "v"):
            x = np.array(getattr(self, name), dtype=float).reshape(-1)
            if x.size != len(active):
                raise ValueError(f"{name} has {x.size} entries for {len(active)} active units")
            object.__setattr__(self, name, x)

    @classmethod
    def cold_start(cls, P0, active) -> "SimState":
        """``(P0, 0, 0)``: any allocation, zero estimator and auxiliary states."""
        n = len(tuple(active))
        return cls(P0, np.zeros(n), np.zeros(n), tuple(active))

    @property
    def n(self) -> int:
        return len(self.active)


@dataclass(frozen=True)
class MismatchModel:
    A: np.ndarray
    R: np.ndarray
    c1: float
    c2: float


@dataclass(frozen=True)
class ConditionReport:
    ok: bool
    lhs: float
    rhs: float
    terms: tuple[float, float] = field(default=(0.0, 0.0))


def _dim(P, L) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if L.shape != (P.size, P.size):
        raise ValueError(f"Laplacian {L.shape} does not match {P.size} units")
    return P


def centralized_field(P, problem: DispatchProblem, params: AlgorithmParams, L: np.ndarray) -> np.ndarray:
    """Laplacian-nonsmooth-gradient term plus the global load-mismatch feedback."""
    P = _dim(P, L)
    zeta = penalty_subgradient_selection(PenaltyCost(problem.fleet, params.epsilon), P)
    return -L @ zeta + (problem.total_load - P.sum()) / P.size


def load_drive(problem: DispatchProblem, params: AlgorithmParams, active) -> np.ndarray:
    """Load term seen by the estimator: ``P_l e_r`` or the per-bus load vector."""
    active = tuple(active)
    if params.load_mode == "distributed_bus":
        load = np.asarray(problem.load, dtype=float)
        if load.ndim == 0:
            raise ValueError("distributed_bus mode needs a per-unit load vector")
        return load.copy()
    if params.r not in active:
        raise ValueError(f"load-informed unit {params.r} is not active")
    e = np.zeros(len(active))
    e[active.index(params.r)] = problem.total_load
    return e


def distributed_field(state: SimState, problem: DispatchProblem, params: AlgorithmParams, L: np.ndarray):
    """Time derivatives ``(dP, dz, dv)`` of the distributed dynamics."""
    P = _dim(state.P, L)
    if problem.fleet.ids != state.active:
        raise ValueError("problem fleet must be restricted to the active units")
    zeta = penalty_subgradient_selection(PenaltyCost(problem.fleet, params.epsilon), P)
    Lz = L @ state.z
    dP = -L @ zeta + params.nu1 * state.z
    dz = (-params.alpha * state.z - params.beta * Lz - state.v
          + params.nu2 * (load_drive(problem, params, state.active) - P))
    dv = params.alpha * params.beta * Lz
    return dP, dz, dv


def load_mismatch_energy(P, load: float) -> float:
    """``0.5 (P_l - 1'P)^2``, the quantity that decays like ``exp(-2t)`` under the centralized flow."""
    return 0.5 * (load - float(np.sum(P))) ** 2


def mismatch_model(params: AlgorithmParams) -> MismatchModel:
    """State matrix of the aggregate mismatch ``(1'P - P_l, d/dt 1'P)`` and its Lyapunov certificate."""
    a, k = params.alpha, params.nu1 * params.nu2
    A = np.array([[0.0, 1.0], [-k, -a]])
    R = np.array([[a * a + k + k * k, a], [a, 1.0 + k]]) / (2.0 * a * k)
    lam = np.linalg.eigvalsh(R)
    return MismatchModel(A, R, float(math.sqrt(lam[-1] / lam[0])), float(1.0 / (2.0 * lam[-1])))


def check_param_condition(bundle: LaplacianBundle, params: AlgorithmParams) -> ConditionReport:
    """Spectral gain condition that guarantees convergence on a given graph."""
    lam2, lmax = bundle.lambda2_sym, bundle.lambda_max_LtL
    if not (bundle.is_strongly_connected and bundle.is_weight_balanced and lam2 > 0):
        raise ValueError("condition needs a strongly connected, weight-balanced graph with lambda_2(L + L^T) > 0")
    t1 = params.nu1 / (params.beta * params.nu2 * lam2)
    t2 = params.nu2**2 * lmax / (2.0 * params.alpha)
    return ConditionReport(t1 + t2 < lam2, t1 + t2, lam2, (t1, t2))


def check_param_condition_distributed(b: GraphBounds, params: AlgorithmParams) -> ConditionReport:
    """Gain condition stated only in terms of locally computable bounds.

    Passing it implies the spectral condition on every graph within the bounds.
    """
    lower = spectral_lower_bound(b)
    upper = spectral_upper_bound(b)
    t1 = params.nu1 / (lower * params.beta * params.nu2)
    t2 = params.nu2**2 * upper / (2.0 * params.alpha)
    return ConditionReport(t1 + t2 < lower, t1 + t2, lower, (t1, t2))


def tune_gains(bundle: LaplacianBundle, params: AlgorithmParams, margin: float = 0.5) -> AlgorithmParams:
    """Pick ``alpha`` and ``beta`` so each term of the spectral condition is ``margin/2 * lambda_2``."""
    lam2, lmax = bundle.lambda2_sym, bundle.lambda_max_LtL
    if not lam2 > 0:
        raise ValueError("graph must be strongly connected and weight-balanced")
    share = 0.5 * margin * lam2
    beta = params.nu1 / (params.nu2 * lam2 * share)
    alpha = max(params.nu2**2 * lmax / (2.0 * share), 1e-12)
    return params.with_gains(alpha=alpha, beta=beta)


def ultimate_bound(params: AlgorithmParams, d1: float, d2: float) -> float:
    """Asymptotic bound on ``|1'P - P_l|`` for loads with ``|dP_l| <= d1`` and ``|d2P_l| <= d2``."""
    if d1 < 0 or d2 < 0:
        raise ValueError("derivative bounds must be non-negative")
    m = mismatch_model(params)
    return m.c1 / m.c2 * (params.alpha * d1 + d2)


def t_rho(params: AlgorithmParams, M1: float, M2: float, rho: float) -> float:
    """Time for the mismatch to fall below ``rho`` after an event, clamped at 0."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    m = mismatch_model(params)
    arg = m.c1 * (M1 + params.nu1 * M2) / rho
    if arg <= 1.0:
        return 0.0
    return math.log(arg) / m.c2
