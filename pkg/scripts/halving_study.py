"""Step-size study: how the allocation changes as dt is halved.

Usage: python3 scripts/halving_study.py [--problems 20] [--t 2.0] [--seed 0]

For random desk-scale problems, integrates from the same start with
dt = 1e-3, 5e-4, 2.5e-4, 1.25e-4 up to time t and prints the max-norm
difference between successive step sizes. A ratio near 2 per halving is
first-order convergence; near 16 is the smooth RK4 rate.
"""

import argparse

import numpy as np

from disped.costs import GeneratorFleet, epsilon_bound
from disped.dynamics import AlgorithmParams, SimState, tune_gains
from disped.graph import WeightedDigraph, build_laplacian
from disped.simulator import EventSchedule, LoadSignal, integrate

DTS = (1e-3, 5e-4, 2.5e-4, 1.25e-4)


def random_case(rng, n):
    pmin = rng.uniform(0, 1, n)
    f = GeneratorFleet(rng.uniform(0, 2, n), rng.uniform(1, 5, n), rng.uniform(0.5, 2, n), pmin,
                       pmin + rng.uniform(2, 5, n))
    lo, hi = f.pmin.sum(), f.pmax.sum()
    load = float(rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)))
    w = {}
    for _ in range(3):
        perm, x = rng.permutation(n) + 1, float(rng.uniform(0.5, 1.5))
        for k in range(n):
            e = (int(perm[k]), int(perm[(k + 1) % n]))
            w[e] = w.get(e, 0.0) + x
    g = WeightedDigraph.from_edges(n, [(i, j, x) for (i, j), x in sorted(w.items())])
    params = tune_gains(build_laplacian(g), AlgorithmParams(nu1=10.0, epsilon=0.5 * epsilon_bound(f, load), r=1),
                        margin=0.9)
    span = f.pmax - f.pmin
    return f, g, params, load, rng.uniform(f.pmin - 0.5 * span, f.pmax + 0.5 * span)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problems", type=int, default=20)
    ap.add_argument("--t", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    rng = np.random.default_rng(a.seed)
    diffs = []
    for _ in range(a.problems):
        f, g, params, load, P0 = random_case(rng, int(rng.integers(3, 9)))
        Ps = [integrate(f, params, g, LoadSignal.constant(load), EventSchedule(), SimState.cold_start(P0, g.vertices),
                        dt, a.t, record_every=10**9).final_state().P for dt in DTS]
        diffs.append([np.abs(Ps[k] - Ps[k + 1]).max() for k in range(len(DTS) - 1)])
    d = np.array(diffs)
    print(f"{'pair':>22} {'median':>10} {'max':>10}")
    for k in range(d.shape[1]):
        print(f"{DTS[k]:.2e} vs {DTS[k + 1]:.2e} {np.median(d[:, k]):10.2e} {d[:, k].max():10.2e}")
    print("median ratio per halving:", np.round(np.median(d[:, :-1] / d[:, 1:], axis=0), 2))


if __name__ == "__main__":
    main()
