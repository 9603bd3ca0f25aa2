"""Trajectory CSV I/O and SVG line charts."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulator import Trajectory  # noqa: E402

PANELS = ("alloc", "cost", "mismatch")


class TrajectoryFileError(ValueError):
    pass


def write_csv(traj: Trajectory, path: str | Path) -> None:
    """Header ``t,mismatch,total_cost,P_<id>...,z_<id>...,v_<id>...``; inactive units are empty cells."""
    ids = traj.unit_ids
    header = ["t", "mismatch", "total_cost"] + [f"{s}_{u}" for s in "Pzv" for u in ids]
    mism = traj.mismatch

    def cell(x):
        return "" if np.isnan(x) else repr(float(x))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(traj.times.size):
            w.writerow([repr(float(traj.times[k])), repr(float(mism[k])), repr(float(traj.total_cost[k]))]
                       + [cell(x) for x in traj.P[k]] + [cell(x) for x in traj.z[k]]
                       + [cell(x) for x in traj.v[k]])


def read_csv(path: str | Path) -> dict:
    """Columns of a trajectory CSV as float arrays (NaN for empty cells), plus the unit ids."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise TrajectoryFileError(f"{path}: {e.strerror}") from None
    if not rows:
        raise TrajectoryFileError(f"{path}: empty file")
    header = rows[0]
    if header[:3] != ["t", "mismatch", "total_cost"]:
        raise TrajectoryFileError(f"{path}:1: expected header starting with t,mismatch,total_cost")
    if len(rows) < 2:
        raise TrajectoryFileError(f"{path}: trajectory has no samples")
    data = np.full((len(rows) - 1, len(header)), np.nan)
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise TrajectoryFileError(f"{path}:{k}: {len(row)} fields, header has {len(header)}")
        for j, x in enumerate(row):
            if x == "":
                continue
            try:
                data[k - 2, j] = float(x)
            except ValueError:
                raise TrajectoryFileError(f"{path}:{k}: column {header[j]!r}: not a number: {x!r}") from None
    ids = [int(h[2:]) for h in header if h.startswith("P_")]
    cols = {h: data[:, j] for j, h in enumerate(header)}
    return {"ids": ids, "columns": cols, "t": cols["t"]}


def _sidecar(csv_path: Path) -> dict:
    meta = csv_path.with_name("metadata.json")
    if meta.exists():
        try:
            return json.loads(meta.read_text())
        except json.JSONDecodeError:
            return {}
    return {}


def plot_panel(csv_path: str | Path, panel: str, out: str | Path | None = None) -> Path:
    """Render one panel of a trajectory CSV to SVG and return the file written.

    Output is byte-identical for identical input.
    """
    if panel not in PANELS:
        raise ValueError(f"unknown panel {panel!r}; choose from {PANELS}")
    csv_path = Path(csv_path)
    tr = read_csv(csv_path)
    out = Path(out) if out is not None else csv_path.with_name(f"{csv_path.stem}_{panel}.svg")
    t, cols = tr["t"], tr["columns"]
    meta = _sidecar(csv_path)

    with plt.rc_context({"svg.hashsalt": "disped", "svg.fonttype": "path", "path.simplify": False}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        if panel == "alloc":
            for u in tr["ids"]:
                ax.plot(t, cols[f"P_{u}"], lw=0.7)
            ax.set_ylabel("power allocation")
        elif panel == "cost":
            ax.plot(t, cols["total_cost"], lw=1.0, color="k")
            oc = meta.get("oracle", {}).get("cost")
            if oc is not None:
                ax.axhline(oc, ls="--", lw=0.8, color="tab:red")
                ax.set_title(f"final {cols['total_cost'][-1]:.6g}, optimum {oc:.6g}", fontsize=9)
            ax.set_ylabel("total cost")
        else:
            ax.plot(t, cols["mismatch"], lw=1.0, color="k")
            ax.axhline(0.0, lw=0.5, color="0.6")
            ax.set_ylabel("total generation minus load")
        ax.set_xlabel("time")
        ax.grid(True, lw=0.3)
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
