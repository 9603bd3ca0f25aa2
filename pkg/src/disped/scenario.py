"""Scenario files: one JSON document per simulation run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .costs import GeneratorFleet, load_fleet
from .dynamics import AlgorithmParams, SimState
from .graph import WeightedDigraph, graph_from_config
from .simulator import Event, EventSchedule, LoadSignal

SCHEMA_VERSION = 1
BUNDLED = ("fig1_abc", "fig1_def", "fig1_ghi", "fig2_bursts")

_graph = {"oneOf": [
    {"enum": ["G", "Ghat", "Gi", "Gf"]},
    {"type": "object", "required": ["edges"], "properties": {
        "n": {"type": "integer", "minimum": 1},
        "vertices": {"type": "array", "items": {"type": "integer"}},
        "edges": {"type": "array", "items": {"type": "array", "minItems": 3, "maxItems": 3}},
    }},
]}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["schema", "graph", "fleet", "load", "params", "sim"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "graph": _graph,
        "fleet": {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "object"}}]},
        "load": {"type": "object", "required": ["kind"], "properties": {
            "kind": {"enum": ["constant", "piecewise_constant", "sinusoid", "decaying_bursts", "table"]}}},
        "events": {"type": "array", "items": {
            "type": "object", "required": ["t", "kind", "unit"],
            "properties": {
                "t": {"type": "number", "minimum": 0},
                "kind": {"enum": ["add", "remove"]},
                "unit": {"type": "integer"},
                "edges": {"type": "array"},
                "edges_from": _graph,
                "P_init": {"type": "number"},
            }}},
        "params": {"type": "object", "properties": {
            "alpha": _pos, "beta": _pos, "nu1": _pos, "nu2": _pos, "epsilon": _pos,
            "r": {"type": "integer"}, "load_mode": {"enum": ["single_bus", "distributed_bus"]}},
            "additionalProperties": False},
        "bus_shares": {"type": "object"},
        "initial": {"type": "object", "properties": {
            "P": {"oneOf": [{"enum": ["midpoint", "random"]}, {"type": "array", "items": {"type": "number"}}]}}},
        "sim": {"type": "object", "required": ["T"], "properties": {
            "dt": _pos, "T": _pos, "record_every": {"type": "integer", "minimum": 1},
            "mode": {"enum": ["centralized", "distributed"]},
            "selection": {"enum": ["sliding", "interior"]}}},
        "outputs": {"type": "object"},
        "checks": {"type": "object", "properties": {
            "kkt": {"type": "boolean"}, "envelope": {"type": "boolean"},
            "v_conservation": {"type": "boolean"}, "kkt_tol": _pos}},
    },
}


class ConfigError(ValueError):
    """Invalid scenario file; the message names the offending position."""


@dataclass
class ScenarioConfig:
    name: str
    graph: WeightedDigraph
    graph_name: str
    fleet: GeneratorFleet
    load: LoadSignal
    events: EventSchedule
    params: AlgorithmParams
    initial: SimState
    dt: float = 1e-3
    T: float = 300.0
    record_every: int = 100
    mode: str = "distributed"
    selection: str = "sliding"
    bus_shares: dict | None = None
    outputs: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    seed: int = 0
    raw: dict = field(default_factory=dict)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("disped.data").joinpath("scenarios", f"{name}.json")))


def _resolve(ref: str | Path) -> Path:
    p = Path(ref)
    if p.exists():
        return p
    if str(ref) in BUNDLED:
        return bundled_path(str(ref))
    raise ConfigError(f"{ref}: no such file or bundled scenario")


def _where(err: jsonschema.ValidationError) -> str:
    return "/".join(str(x) for x in err.absolute_path) or "<root>"


def load_config(ref: str | Path, seed: int | None = None, dt: float | None = None) -> ScenarioConfig:
    path = _resolve(ref)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    return parse_config(raw, source=str(path), seed=seed, dt=dt, base=path.parent)


def parse_config(raw: dict, source: str = "<config>", seed: int | None = None, dt: float | None = None,
                 base: Path | None = None) -> ScenarioConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"{source}: at {_where(e)}: {e.message}") from None

    def at(key, fn):
        try:
            return fn()
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError, FileNotFoundError) as e:
            raise ConfigError(f"{source}: at {key}: {e}") from None

    graph = at("graph", lambda: graph_from_config(raw["graph"]))
    graph_name = raw["graph"] if isinstance(raw["graph"], str) else "inline"

    def fleet_of():
        f = raw["fleet"]
        if isinstance(f, list):
            return GeneratorFleet.from_records(f)
        p = Path(f)
        if base is not None and not p.is_absolute() and (base / p).exists():
            p = base / p
        return load_fleet(p if p.exists() else f)

    fleet = at("fleet", fleet_of)
    missing = set(graph.vertices) - set(fleet.ids)
    if missing:
        raise ConfigError(f"{source}: at graph: units {sorted(missing)} are not in the fleet")
    load = at("load", lambda: LoadSignal.from_dict(raw["load"]))

    def events_of():
        out = []
        for e in raw.get("events", []):
            ef = graph_from_config(e["edges_from"]) if "edges_from" in e else None
            edges = tuple(tuple(x) for x in e["edges"]) if "edges" in e else None
            if e["unit"] not in fleet.ids:
                raise ValueError(f"unit {e['unit']} is not in the fleet")
            out.append(Event(float(e["t"]), e["kind"], int(e["unit"]), edges, ef, e.get("P_init")))
        return EventSchedule(tuple(out))

    events = at("events", events_of)
    params = at("params", lambda: AlgorithmParams(**raw["params"]))
    sim = raw["sim"]
    seed = int(raw.get("seed", 0) if seed is None else seed)

    sub = fleet.subset(graph.vertices)
    p0 = raw.get("initial", {}).get("P", "midpoint")

    def initial_of():
        if p0 == "midpoint":
            P = sub.midpoint()
        elif p0 == "random":
            rng = np.random.default_rng(seed)
            span = sub.pmax - sub.pmin
            P = rng.uniform(sub.pmin - 0.5 * span, sub.pmax + 0.5 * span)
        else:
            P = np.asarray(p0, dtype=float)
        return SimState.cold_start(P, graph.vertices)

    initial = at("initial/P", initial_of)
    shares = raw.get("bus_shares")
    if shares is not None:
        shares = {int(k): float(v) for k, v in shares.items()}
    return ScenarioConfig(
        name=raw.get("name", Path(source).stem), graph=graph, graph_name=graph_name, fleet=fleet,
        load=load, events=events, params=params, initial=initial,
        dt=float(sim.get("dt", 1e-3) if dt is None else dt), T=float(sim["T"]),
        record_every=int(sim.get("record_every", 100)), mode=sim.get("mode", "distributed"),
        selection=sim.get("selection", "sliding"), bus_shares=shares, outputs=raw.get("outputs", {}),
        checks=raw.get("checks", {}), seed=seed, raw=raw,
    )
