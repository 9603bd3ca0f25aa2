"""Command-line entry point: ``disped run | solve | check-params | bounds | plot``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .costs import GeneratorFleet, epsilon_bound, load_fleet
from .dynamics import (AlgorithmParams, check_param_condition, check_param_condition_distributed,
                       mismatch_model, t_rho, ultimate_bound)
from .graph import build_laplacian, consensus_bounds
from .oracle import DispatchProblem, InfeasibleDispatch, kkt_check, solve_lambda_iteration
from .plotting import PANELS, TrajectoryFileError, plot_panel, write_csv
from .scenario import BUNDLED, ConfigError, ScenarioConfig, load_config
from .simulator import Trajectory, constant_load_segments, integrate, mismatch_envelope_check

log = logging.getLogger("disped")

V_TOL = 1e-9
EXIT_OK, EXIT_CHECKS, EXIT_INPUT = 0, 1, 2


@dataclass
class RunReport:
    name: str
    out_dir: str
    terminal_mismatch: float
    terminal_cost: float
    oracle_cost: float | None
    kkt: str
    envelope: str
    envelope_ratio: float | None
    v_max: float
    v_ok: bool
    passed: bool
    segments: list = field(default_factory=list)

    def lines(self) -> list[str]:
        oc = "n/a" if self.oracle_cost is None else f"{self.oracle_cost:.10g}"
        ratio = "" if self.envelope_ratio is None else f" (worst ratio {self.envelope_ratio:.6f})"
        return [
            f"[{self.name}] output: {self.out_dir}",
            f"  terminal mismatch : {self.terminal_mismatch:.6e}",
            f"  terminal cost     : {self.terminal_cost:.10g}",
            f"  oracle cost       : {oc}",
            f"  kkt               : {self.kkt}",
            f"  envelope          : {self.envelope}{ratio}",
            f"  max |sum v|       : {self.v_max:.3e} ({'ok' if self.v_ok else 'FAIL'})",
            f"  verdict           : {'PASS' if self.passed else 'FAIL'}",
        ]


def output_root() -> Path:
    return Path(os.environ.get("DISPED_OUT", "runs"))


def _params_dict(p: AlgorithmParams) -> dict:
    return asdict(p)


def envelope_checks(traj: Trajectory, cfg: ScenarioConfig) -> list[dict]:
    out = []
    for k, t0, t1 in constant_load_segments(traj, cfg.load):
        rows = traj.rows_between(t0, t1, k)
        if rows.size < 2:
            continue
        params = traj.segments[k]["params"]
        rep = mismatch_envelope_check(traj, mismatch_model(params), params, (t0, t1), seg_index=k)
        out.append({"segment": k, "t0": rep.t0, "t1": rep.t1, "samples": rep.samples,
                    "ratio": rep.ratio_max, "passed": rep.passed})
    return out


def simulate(cfg: ScenarioConfig) -> Trajectory:
    return integrate(cfg.fleet, cfg.params, cfg.graph, cfg.load, cfg.events, cfg.initial, cfg.dt, cfg.T,
                     mode=cfg.mode, record_every=cfg.record_every, selection=cfg.selection,
                     bus_shares=cfg.bus_shares)


def run_scenario(cfg: ScenarioConfig, out_dir: Path, plots: bool = True) -> RunReport:
    """Integrate, write ``trajectory.csv`` and ``metadata.json`` and evaluate the enabled checks."""
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = simulate(cfg)
    checks = {"kkt": True, "envelope": True, "v_conservation": True, **cfg.checks}

    final = traj.final_state()
    load_T = float(traj.load[-1])
    sub = cfg.fleet.subset(final.active)
    oracle, kkt_txt, kkt_ok = None, "skipped", True
    try:
        prob = DispatchProblem(sub, load_T)
        oracle = solve_lambda_iteration(prob)
    except InfeasibleDispatch as e:
        prob = None
        kkt_txt = f"n/a ({e})"
    if checks["kkt"]:
        if prob is None:
            kkt_ok = False
        else:
            rep = kkt_check(prob, final.P, traj.segments[-1]["params"].epsilon, tol=checks.get("kkt_tol"))
            kkt_ok = rep.ok
            kkt_txt = "ok" if rep.ok else f"FAIL {rep.violations}"

    env = envelope_checks(traj, cfg) if checks["envelope"] else []
    env_ok = all(e["passed"] for e in env)
    if not checks["envelope"]:
        env_txt = "skipped"
    elif not env:
        env_txt = "no constant-load segments"
    else:
        env_txt = f"{'ok' if env_ok else 'FAIL'} on {len(env)} segment(s)"
    ratio = max((e["ratio"] for e in env), default=None)

    v_max = float(np.abs(traj.sum_v).max())
    v_ok = v_max <= V_TOL or not checks["v_conservation"] or cfg.mode == "centralized"
    passed = kkt_ok and env_ok and v_ok

    csv_name = cfg.outputs.get("csv", "trajectory.csv")
    write_csv(traj, out_dir / csv_name)
    segs = [{"t0": s["t0"], "t1": s["t1"], "active": list(s["active"]), "dt": s["dt"], "steps": s["steps"],
             "params": _params_dict(s["params"])} for s in traj.segments]
    meta = {
        "name": cfg.name, "version": __version__, "graph": cfg.graph_name, "seed": cfg.seed,
        "params": _params_dict(cfg.params), "sim": {"dt": cfg.dt, "T": cfg.T, "record_every": cfg.record_every,
                                                    "mode": cfg.mode, "selection": cfg.selection},
        "load": cfg.load.to_dict(), "event_log": traj.event_log, "segments": segs,
        "oracle": None if oracle is None else {"cost": oracle.cost, "mu": oracle.mu, "load": load_T,
                                               "units": list(sub.ids), "P_star": oracle.P_star.tolist()},
        "checks": {"kkt": kkt_txt, "envelope": env, "v_max": v_max, "passed": passed},
        "box_violation_max": traj.box_violation_max,
    }
    (out_dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if plots:
        for panel in cfg.outputs.get("plots", []):
            plot_panel(out_dir / csv_name, panel, out_dir / f"{panel}.svg")
    return RunReport(cfg.name, str(out_dir), float(traj.mismatch[-1]), float(traj.total_cost[-1]),
                     None if oracle is None else oracle.cost, kkt_txt, env_txt, ratio, v_max, v_ok, passed, env)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, _, val = item.partition("=")
        if not _:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _load(ref, seed=None, dt=None, sets=None) -> ScenarioConfig:
    cfg = load_config(ref, seed=seed, dt=dt)
    kw = _overrides(sets)
    if kw:
        try:
            cfg.params = cfg.params.with_gains(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"--set: {e}") from None
    return cfg


def _run_one(ref, out, seed, dt, sets, plots):
    cfg = _load(ref, seed, dt, sets)
    out_dir = Path(out) if out else output_root() / cfg.name
    return run_scenario(cfg, out_dir, plots=plots)


def cmd_run(a) -> int:
    if a.all == (a.config is not None):
        print("run: give a config or --all", file=sys.stderr)
        return EXIT_INPUT
    if a.all:
        root = Path(a.out) if a.out else output_root()
        jobs = [(name, str(root / name), a.seed, a.dt, a.set, not a.no_plots) for name in BUNDLED]
        if a.jobs > 1:
            with ProcessPoolExecutor(max_workers=a.jobs) as ex:
                reports = list(ex.map(_run_one, *zip(*jobs)))
        else:
            reports = [_run_one(*j) for j in jobs]
    else:
        reports = [_run_one(a.config, a.out, a.seed, a.dt, a.set, not a.no_plots)]
    for r in reports:
        print("\n".join(r.lines()))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECKS


def _problem_from(path: str) -> tuple[DispatchProblem, float]:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if "fleet" not in raw or "load" not in raw:
        raise ConfigError(f"{path}: problem needs 'fleet' and 'load'")
    f = raw["fleet"]
    try:
        if isinstance(f, list):
            fleet = GeneratorFleet.from_records(f)
        else:
            q = p.parent / f
            fleet = load_fleet(q if q.exists() else f)
    except (ValueError, KeyError, FileNotFoundError) as e:
        raise ConfigError(f"{path}: at fleet: {e}") from None
    return DispatchProblem(fleet, raw["load"]), float(raw.get("epsilon", 0.0))


def cmd_solve(a) -> int:
    prob, _ = _problem_from(a.problem)
    sol = solve_lambda_iteration(prob)
    doc = {"units": list(prob.fleet.ids), "P_star": sol.P_star.tolist(), "mu": sol.mu, "cost": sol.cost}
    text = json.dumps(doc, indent=2) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check_params(a) -> int:
    cfg = _load(a.config, sets=a.set)
    p = cfg.params
    bundle = build_laplacian(cfg.graph)
    spec = check_param_condition(bundle, p)
    dist = check_param_condition_distributed(consensus_bounds(cfg.graph), p)
    m = mismatch_model(p)
    print(f"graph {cfg.graph_name}: n={cfg.graph.n} lambda2(L+L^T)={bundle.lambda2_sym:.6g} "
          f"lambda_max(L^T L)={bundle.lambda_max_LtL:.6g}")
    print(f"spectral condition : lhs={spec.lhs:.6g} rhs={spec.rhs:.6g} ok={str(spec.ok).lower()}")
    print(f"local-bound cond.  : lhs={dist.lhs:.6g} rhs={dist.rhs:.6g} ok={str(dist.ok).lower()}")
    sub = cfg.fleet.subset(cfg.graph.vertices)
    try:
        eb = epsilon_bound(sub, float(cfg.load.value(0.0)))
        print(f"epsilon bound      : {eb:.6g} (epsilon={p.epsilon:g}, ok={str(p.epsilon < eb).lower()})")
    except ValueError as e:
        print(f"epsilon bound      : n/a ({e})")
    print(f"c1={m.c1:.6g} c2={m.c2:.6g}")
    if None not in (a.M1, a.M2, a.rho):
        print(f"t_rho={t_rho(p, a.M1, a.M2, a.rho):.6g} (M1={a.M1:g}, M2={a.M2:g}, rho={a.rho:g})")
    return EXIT_OK


def cmd_bounds(a) -> int:
    cfg = _load(a.config, sets=a.set)
    p = cfg.params
    m = mismatch_model(p)
    d = cfg.load.derivative_bounds()
    d1 = a.d1 if a.d1 is not None else (d[0] if d else None)
    d2 = a.d2 if a.d2 is not None else (d[1] if d else None)
    print(f"c1={m.c1:.6g} c2={m.c2:.6g}")
    if d1 is None or d2 is None:
        print("ultimate bound: n/a (load is not twice differentiable; pass --d1 and --d2)")
    else:
        print(f"ultimate bound={ultimate_bound(p, d1, d2):.6g} (d1={d1:g}, d2={d2:g})")
    if None not in (a.M1, a.M2, a.rho):
        print(f"t_rho={t_rho(p, a.M1, a.M2, a.rho):.6g}")
    return EXIT_OK


def cmd_plot(a) -> int:
    out = plot_panel(a.csv, a.panel, a.out)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="disped", description="Distributed economic dispatch simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sp = ap.add_subparsers(dest="cmd", required=True)

    r = sp.add_parser("run", help="simulate a scenario and check the result")
    r.add_argument("config", nargs="?", help="scenario file or bundled name " + "/".join(BUNDLED))
    r.add_argument("--all", action="store_true", help="run every bundled scenario")
    r.add_argument("--out", help="output directory (root directory with --all)")
    r.add_argument("--dt", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override an algorithm parameter")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sp.add_parser("solve", help="centralized optimum of a dispatch problem")
    s.add_argument("problem", help='JSON file {"fleet": ..., "load": ...}')
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    for name, fn, help_ in (("check-params", cmd_check_params, "gain conditions and constants"),
                            ("bounds", cmd_bounds, "mismatch bounds for the scenario's load")):
        c = sp.add_parser(name, help=help_)
        c.add_argument("config")
        c.add_argument("--M1", type=float)
        c.add_argument("--M2", type=float)
        c.add_argument("--rho", type=float)
        c.add_argument("--set", action="append", metavar="KEY=VALUE")
        if name == "bounds":
            c.add_argument("--d1", type=float)
            c.add_argument("--d2", type=float)
        c.set_defaults(func=fn)

    pl = sp.add_parser("plot", help="SVG chart from a trajectory CSV")
    pl.add_argument("csv")
    pl.add_argument("--panel", choices=PANELS, required=True)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except (ConfigError, InfeasibleDispatch, TrajectoryFileError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
