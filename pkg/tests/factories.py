"""Random fixtures shared by the test modules."""

from __future__ import annotations

import numpy as np

from disped.costs import GeneratorFleet
from disped.graph import WeightedDigraph
from disped.oracle import DispatchProblem


def ieee_range_fleet(rng: np.random.Generator, n: int) -> GeneratorFleet:
    """Coefficients drawn from the IEEE-118 ranges, boxes of 50..300 MW."""
    pmax = rng.uniform(50, 300, n)
    return GeneratorFleet(
        a=rng.uniform(6.78, 74.33, n), b=rng.uniform(8.3391, 37.6968, n), c=rng.uniform(0.0024, 0.0697, n),
        pmin=0.1 * pmax, pmax=pmax, ids=tuple(range(1, n + 1)),
    )


def desk_fleet(rng: np.random.Generator, n: int) -> GeneratorFleet:
    """Unit-scale strictly convex fleet; fast to simulate to convergence."""
    pmin = rng.uniform(0.0, 1.0, n)
    return GeneratorFleet(
        a=rng.uniform(0, 2, n), b=rng.uniform(1, 5, n), c=rng.uniform(0.5, 2.0, n),
        pmin=pmin, pmax=pmin + rng.uniform(2, 5, n), ids=tuple(range(1, n + 1)),
    )


def feasible_load(rng: np.random.Generator, fleet: GeneratorFleet, margin: float = 0.1) -> float:
    lo, hi = fleet.pmin.sum(), fleet.pmax.sum()
    return float(rng.uniform(lo + margin * (hi - lo), hi - margin * (hi - lo)))


def random_problem(rng: np.random.Generator, n: int, kind: str = "desk") -> DispatchProblem:
    fleet = desk_fleet(rng, n) if kind == "desk" else ieee_range_fleet(rng, n)
    return DispatchProblem(fleet, feasible_load(rng, fleet))


def random_balanced_digraph(rng: np.random.Generator, n: int, cycles: int = 3,
                            wlo: float = 0.5, whi: float = 1.5) -> WeightedDigraph:
    """Sum of weighted directed Hamiltonian cycles: strongly connected and weight-balanced."""
    w: dict[tuple[int, int], float] = {}
    for _ in range(cycles):
        perm = rng.permutation(n) + 1
        weight = float(rng.uniform(wlo, whi))
        for k in range(n):
            e = (int(perm[k]), int(perm[(k + 1) % n]))
            w[e] = w.get(e, 0.0) + weight
    return WeightedDigraph.from_edges(n, [(i, j, x) for (i, j), x in sorted(w.items())])


def line_graph(n: int, weight: float = 1.0) -> WeightedDigraph:
    edges = []
    for i in range(1, n):
        edges += [(i, i + 1, weight), (i + 1, i, weight)]
    return WeightedDigraph.from_edges(n, edges)
