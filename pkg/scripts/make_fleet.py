"""Regenerate the bundled synthetic 54-unit fleet.

Cost coefficients are drawn uniformly from the IEEE 118-bus ranges. Box
limits are synthetic: capacities are drawn from [100, 300] MW and capped so
that the marginal cost never exceeds ``GRAD_CAP`` on the box, which keeps the
penalty weight 0.0086 admissible. Minimum output is 10% of capacity.
"""

import json
from pathlib import Path

import numpy as np

SEED = 118
GRAD_CAP = 55.0
OUT = Path(__file__).resolve().parents[1] / "src" / "disped" / "data" / "ieee118_54units.json"


def main():
    rng = np.random.default_rng(SEED)
    n = 54
    a = rng.uniform(6.78, 74.33, n)
    b = rng.uniform(8.3391, 37.6968, n)
    c = rng.uniform(0.0024, 0.0697, n)
    cap = rng.uniform(100.0, 300.0, n)
    pmax = np.floor(10 * np.minimum(cap, (GRAD_CAP - b) / (2 * c))) / 10
    pmin = np.round(0.1 * pmax, 1)
    units = [
        {"id": i + 1, "a": round(float(a[i]), 4), "b": round(float(b[i]), 4), "c": round(float(c[i]), 5),
         "pmin": float(pmin[i]), "pmax": float(pmax[i])}
        for i in range(n)
    ]
    doc = {
        "name": "ieee118_54units",
        "note": "synthetic: coefficients sampled from the IEEE 118-bus ranges, box limits invented",
        "seed": SEED,
        "units": units,
    }
    OUT.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {OUT}: sum pmin {pmin.sum():.1f}, sum pmax {pmax.sum():.1f}")


if __name__ == "__main__":
    main()
