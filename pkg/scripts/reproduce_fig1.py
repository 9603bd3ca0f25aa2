"""Run the bundled scenarios and write every chart (allocation, cost, mismatch).

Usage: python3 scripts/reproduce_fig1.py [OUT_DIR]

Each scenario lands in OUT_DIR/<name>/ (default ``runs/``) with its CSV,
metadata and SVG panels; the run summaries are printed at the end.
"""

import sys
from pathlib import Path

from disped.cli import run_scenario
from disped.plotting import PANELS, plot_panel
from disped.scenario import BUNDLED, load_config


def main(out_root: Path) -> int:
    status = 0
    for name in BUNDLED:
        cfg = load_config(name)
        out = out_root / name
        rep = run_scenario(cfg, out)
        for panel in PANELS:
            plot_panel(out / cfg.outputs.get("csv", "trajectory.csv"), panel, out / f"{panel}.svg")
        print("\n".join(rep.lines()), flush=True)
        status |= not rep.passed
    return status


if __name__ == "__main__":
    sys.exit(main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs")))
