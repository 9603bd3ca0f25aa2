"""Quadratic generator costs and the exact-penalty reformulation of the box constraints."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class GeneratorFleet:
    """Per-unit quadratic costs ``a + b P + c P^2`` with box limits ``[pmin, pmax]``.

    ``ids`` are the unit labels (1-based by default); all arrays are aligned
    with ``ids``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    ids: tuple[int, ...] = ()

    def __post_init__(self):
        arrs = {}
        for name in ("a", "b", "c", "pmin", "pmax"):
            x = np.array(getattr(self, name), dtype=float).reshape(-1)
            x.flags.writeable = False
            arrs[name] = x
            object.__setattr__(self, name, x)
        n = arrs["a"].size
        if any(x.size != n for x in arrs.values()):
            raise ValueError("fleet arrays must share one length")
        if n == 0:
            raise ValueError("empty fleet")
        ids = tuple(int(i) for i in self.ids) if self.ids else tuple(range(1, n + 1))
        if len(ids) != n or len(set(ids)) != n:
            raise ValueError("fleet ids must be unique, one per unit")
        object.__setattr__(self, "ids", ids)
        if np.any(arrs["c"] < 0):
            raise ValueError("quadratic coefficients must be non-negative (convex costs)")
        if np.any(arrs["pmin"] > arrs["pmax"]):
            raise ValueError("pmin must not exceed pmax")

    @property
    def n(self) -> int:
        return self.a.size

    def gradient(self, P) -> np.ndarray:
        return self.b + 2.0 * self.c * np.asarray(P, dtype=float)

    def subset(self, ids: Iterable[int]) -> "GeneratorFleet":
        pos = {u: k for k, u in enumerate(self.ids)}
        idx = [pos[int(u)] for u in ids]
        return GeneratorFleet(
            self.a[idx], self.b[idx], self.c[idx], self.pmin[idx], self.pmax[idx],
            tuple(self.ids[k] for k in idx),
        )

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.pmin + self.pmax)

    def to_records(self) -> list[dict]:
        return [
            {"id": u, "a": float(a), "b": float(b), "c": float(c), "pmin": float(lo), "pmax": float(hi)}
            for u, a, b, c, lo, hi in zip(self.ids, self.a, self.b, self.c, self.pmin, self.pmax)
        ]

    @classmethod
    def from_records(cls, records: Sequence[Mapping]) -> "GeneratorFleet":
        ids = tuple(int(r["id"]) for r in records) if all("id" in r for r in records) else ()
        return cls(
            [r.get("a", 0.0) for r in records],
            [r["b"] for r in records],
            [r["c"] for r in records],
            [r["pmin"] for r in records],
            [r["pmax"] for r in records],
            ids,
        )


def load_fleet(ref: str | Path) -> GeneratorFleet:
    """Read a fleet file, or a bundled fleet by name (e.g. ``"ieee118_54units"``)."""
    p = Path(ref)
    if p.suffix == "" and not p.exists():
        text = resources.files("disped.data").joinpath(f"{ref}.json").read_text()
    else:
        text = p.read_text()
    data = json.loads(text)
    if isinstance(data, Mapping):
        data = data["units"]
    return GeneratorFleet.from_records(data)


def _check_len(fleet: GeneratorFleet, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (fleet.n,):
        raise ValueError(f"allocation has shape {P.shape}, fleet has {fleet.n} units")
    return P


def cost_value(fleet: GeneratorFleet, P) -> float:
    P = _check_len(fleet, P)
    return float(np.sum(fleet.a + fleet.b * P + fleet.c * P * P))


@dataclass(frozen=True)
class PenaltyCost:
    fleet: GeneratorFleet
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"penalty weight epsilon must be positive, got {self.epsilon}")


def box_violation(fleet: GeneratorFleet, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return np.maximum(P - fleet.pmax, 0.0) + np.maximum(fleet.pmin - P, 0.0)


def penalty_value(pc: PenaltyCost, P) -> float:
    P = _check_len(pc.fleet, P)
    return cost_value(pc.fleet, P) + float(box_violation(pc.fleet, P).sum()) / pc.epsilon


def penalty_subgradient_selection(pc: PenaltyCost, P) -> np.ndarray:
    """Single-valued element of the generalized gradient.

    Off the box boundary this is the gradient of the penalized cost; on the
    boundary it is the plain cost gradient, which always lies in the interval.
    """
    P = _check_len(pc.fleet, P)
    f = pc.fleet
    g = f.gradient(P)
    return g + ((P > f.pmax).astype(float) - (P < f.pmin).astype(float)) / pc.epsilon


def penalty_subgradient_interval(pc: PenaltyCost, P, atol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit generalized-gradient intervals ``(lo, hi)``.

    Units within ``atol`` of a box limit are treated as sitting on it.
    """
    P = _check_len(pc.fleet, P)
    f = pc.fleet
    g = f.gradient(P)
    k = 1.0 / pc.epsilon
    at_lo = np.abs(P - f.pmin) <= atol
    at_hi = np.abs(P - f.pmax) <= atol
    below = (P < f.pmin) & ~at_lo
    above = (P > f.pmax) & ~at_hi
    lo = g - k * (below | at_lo) + k * above
    hi = g - k * below + k * (above | at_hi)
    return lo, hi


def max_box_gradient(fleet: GeneratorFleet) -> float:
    return float(np.max(np.maximum(np.abs(fleet.gradient(fleet.pmin)), np.abs(fleet.gradient(fleet.pmax)))))


def epsilon_bound(fleet: GeneratorFleet, load: float) -> float:
    """Largest admissible penalty weight, computed conservatively over the whole box.

    Returns ``inf`` when every gradient on the box is zero.
    """
    load = float(np.sum(load))
    lo, hi = float(fleet.pmin.sum()), float(fleet.pmax.sum())
    if not lo < load < hi:
        raise ValueError(f"load {load} outside the open feasible range ({lo}, {hi})")
    gmax = max_box_gradient(fleet)
    if gmax == 0.0:
        return float("inf")
    return 1.0 / (2.0 * gmax)
