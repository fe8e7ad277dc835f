"""Scenario documents: JSON loading, dotted-path overrides and validation."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import jsonschema

from mergesim.engine import IpPools, seconds_to_ns
from mergesim.events import SensorEvent
from mergesim.mobility import FlowSpec, VehiclePrototype
from mergesim.radio import RadioConfig
from mergesim.world import (
    GeoPoint,
    GeoRectangle,
    InvalidInput,
    Projection,
    RoadNetwork,
    Route,
    RouteLabel,
    polyline_from_pairs,
    zone_entry,
)


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` is the dotted location of the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


class SchemaViolation(ScenarioError):
    pass


class MalformedDocument(ScenarioError):
    pass


class RouteLabelError(ScenarioError):
    pass


class MergeZoneError(ScenarioError):
    pass


class OverrideError(ScenarioError):
    pass


_POINT = {
    "type": "object",
    "required": ["lat", "lon"],
    "properties": {"lat": {"type": "number"}, "lon": {"type": "number"}},
}
_RECT = {"type": "object", "required": ["a", "b"], "properties": {"a": _POINT, "b": _POINT}}
_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["simulation", "routes", "rsus", "flows", "prototype", "radio", "events", "ip_pools"],
    "properties": {
        "simulation": {
            "type": "object",
            "required": ["start_time_s", "end_time_s", "random_seed", "center", "cartesian_offset"],
            "properties": {
                "id": {"type": "string", "minLength": 1},
                "start_time_s": {"type": "number", "minimum": 0},
                "end_time_s": {"type": "number", "minimum": 0},
                "random_seed": {"type": "integer"},
                "center": _POINT,
                "cartesian_offset": {
                    "type": "object",
                    "required": ["x", "y"],
                    "properties": {"x": _num, "y": _num},
                },
                "mobility_step_s": {"type": "number", "minimum": 0.1, "maximum": 1.0},
            },
        },
        "routes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "label", "polyline"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "label": {"enum": ["A", "B"]},
                    "polyline": {
                        "type": "array",
                        "minItems": 2,
                        "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _num},
                    },
                },
            },
        },
        "merge_zone": _RECT,
        "rsus": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "lat", "lon"],
                "properties": {"id": {"type": "string"}, "lat": _num, "lon": _num},
            },
        },
        "flows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["route_id", "starting_time_s", "flow_veh_per_h", "max_vehicles", "prototype"],
                "properties": {
                    "route_id": {"type": "string"},
                    "starting_time_s": {"type": "number", "minimum": 0},
                    "flow_veh_per_h": _pos,
                    "max_vehicles": {"type": "integer", "minimum": 1},
                    "prototype": {"type": "string"},
                },
            },
        },
        "prototype": {
            "type": "object",
            "required": ["name", "accel", "decel", "length", "max_speed", "min_gap", "sigma", "tau"],
            "properties": {
                "name": {"type": "string"},
                "accel": _pos,
                "decel": _pos,
                "length": _pos,
                "max_speed": _pos,
                "min_gap": _pos,
                "sigma": {"type": "number", "minimum": 0, "maximum": 1},
                "tau": _pos,
            },
        },
        "radio": {
            "type": "object",
            "required": ["range_m", "latency_s", "loss_prob"],
            "properties": {
                "range_m": _pos,
                "latency_s": {"type": "number", "minimum": 0},
                "loss_prob": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "power_mw": {"type": "number"},
                "channel": {"type": "string"},
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "rectangle", "strength", "start_s", "end_s"],
                "properties": {
                    "type": {"enum": ["Speed", "Direction", "Other"]},
                    "rectangle": _RECT,
                    "strength": {"type": "integer", "minimum": 1},
                    "start_s": {"type": "number"},
                    "end_s": {"type": "number"},
                },
            },
        },
        "ip_pools": {
            "type": "object",
            "required": ["net_mask", "vehicle_net", "rsu_net"],
            "properties": {
                "net_mask": {"type": "string"},
                "vehicle_net": {"type": "string"},
                "rsu_net": {"type": "string"},
            },
        },
    },
}


@dataclass(frozen=True)
class SimulationConfig:
    id: str
    start_ns: int
    end_ns: int
    random_seed: int
    projection: Projection
    mobility_step_ns: int


@dataclass(frozen=True)
class RsuSpec:
    id: str
    position: GeoPoint


@dataclass(frozen=True)
class Scenario:
    simulation: SimulationConfig
    network: RoadNetwork
    rsus: tuple[RsuSpec, ...]
    flows: tuple[FlowSpec, ...]
    prototype: VehiclePrototype
    radio: RadioConfig
    events: tuple[SensorEvent, ...]
    ip_pools: IpPools
    document: dict

    @property
    def merge_zone(self) -> GeoRectangle:
        return self.network.merge_zone

    def digest(self) -> str:
        canon = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _dotted(path: Iterable[Any]) -> str:
    return ".".join(str(p) for p in path)


def _point(d: dict, path: str) -> GeoPoint:
    try:
        return GeoPoint(float(d["lat"]), float(d["lon"]))
    except InvalidInput as exc:
        raise SchemaViolation(path, str(exc)) from None


def _rectangle(d: dict, path: str) -> GeoRectangle:
    return GeoRectangle(_point(d["a"], f"{path}.a"), _point(d["b"], f"{path}.b"))


def parse_scenario(doc: Any) -> Scenario:
    """Validate a decoded scenario document and build the typed ``Scenario``."""
    err = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(SCHEMA).iter_errors(doc))
    if err is not None:
        raise SchemaViolation(_dotted(err.absolute_path), err.message)

    sim = doc["simulation"]
    if sim["end_time_s"] < sim["start_time_s"]:
        raise SchemaViolation("simulation.end_time_s", "end time precedes start time")
    center = _point(sim["center"], "simulation.center")
    proj = Projection(center, float(sim["cartesian_offset"]["x"]), float(sim["cartesian_offset"]["y"]))
    sim_cfg = SimulationConfig(
        id=sim.get("id", "scenario"),
        start_ns=seconds_to_ns(sim["start_time_s"]),
        end_ns=seconds_to_ns(sim["end_time_s"]),
        random_seed=int(sim["random_seed"]),
        projection=proj,
        mobility_step_ns=seconds_to_ns(sim.get("mobility_step_s", 1.0)),
    )

    routes = []
    seen_ids: dict[str, int] = {}
    seen_labels: dict[str, int] = {}
    for i, r in enumerate(doc["routes"]):
        path = f"routes.{i}"
        if r["id"] in seen_ids:
            raise SchemaViolation(f"{path}.id", f"duplicate route id {r['id']!r}")
        if r["label"] in seen_labels:
            raise RouteLabelError(
                f"{path}.label",
                f"label {r['label']!r} already used by routes.{seen_labels[r['label']]}",
            )
        seen_ids[r["id"]] = i
        seen_labels[r["label"]] = i
        try:
            poly = polyline_from_pairs(r["polyline"])
        except InvalidInput as exc:
            raise SchemaViolation(f"{path}.polyline", str(exc)) from None
        routes.append(Route(r["id"], RouteLabel(r["label"]), poly))
    for label in ("A", "B"):
        if label not in seen_labels:
            raise RouteLabelError("routes", f"no route labeled {label!r}")

    events = []
    for i, e in enumerate(doc["events"]):
        if e["start_s"] > e["end_s"]:
            raise SchemaViolation(f"events.{i}.start_s", "event window starts after it ends")
        rect = _rectangle(e["rectangle"], f"events.{i}.rectangle")
        events.append(SensorEvent(e["type"], rect, e["strength"], e["start_s"], e["end_s"]))
    events = tuple(events)

    if "merge_zone" in doc:
        zone, zone_path = _rectangle(doc["merge_zone"], "merge_zone"), "merge_zone"
    elif events:
        zone, zone_path = events[0].rectangle, "events.0.rectangle"
    else:
        raise MergeZoneError("merge_zone", "no merge_zone given and no event rectangle to default to")
    for i, r in enumerate(routes):
        if zone_entry(r, zone) is None:
            raise MergeZoneError(zone_path, f"merge zone does not intersect route {r.id!r} (routes.{i})")

    rsus = tuple(RsuSpec(r["id"], _point(r, f"rsus.{i}")) for i, r in enumerate(doc["rsus"]))

    p = doc["prototype"]
    proto = VehiclePrototype(
        accel=p["accel"], decel=p["decel"], length=p["length"], max_speed=p["max_speed"],
        min_gap=p["min_gap"], sigma=p["sigma"], tau=p["tau"], name=p["name"],
    )
    flows = []
    for i, f in enumerate(doc["flows"]):
        if f["route_id"] not in seen_ids:
            raise SchemaViolation(f"flows.{i}.route_id", f"unknown route {f['route_id']!r}")
        if f["prototype"] != proto.name:
            raise SchemaViolation(f"flows.{i}.prototype", f"unknown prototype {f['prototype']!r}")
        flows.append(FlowSpec(f["route_id"], f["starting_time_s"], f["flow_veh_per_h"], f["max_vehicles"], proto))

    rd = doc["radio"]
    radio = RadioConfig(
        range_m=rd["range_m"],
        latency_ns=seconds_to_ns(rd["latency_s"]),
        loss_prob=rd["loss_prob"],
        power_mw=rd.get("power_mw", 50.0),
        channel=rd.get("channel", "CCH"),
    )
    ip = doc["ip_pools"]
    network = RoadNetwork(tuple(routes), zone, rsus[0].position if rsus else None)
    return Scenario(
        simulation=sim_cfg,
        network=network,
        rsus=rsus,
        flows=tuple(flows),
        prototype=proto,
        radio=radio,
        events=events,
        ip_pools=IpPools(ip["net_mask"], ip["vehicle_net"], ip["rsu_net"]),
        document=copy.deepcopy(doc),
    )


def read_document(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MalformedDocument("", f"scenario file not found: {path}") from None
    except OSError as exc:
        raise MalformedDocument("", f"cannot read {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument("", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_scenario(path: str | Path, overrides: Iterable[str] = ()) -> Scenario:
    doc = read_document(path)
    return parse_scenario(apply_overrides(doc, overrides))


def apply_overrides(doc: dict, overrides: Iterable[str]) -> dict:
    """Apply ``dotted.path=value`` overrides; values parse as JSON, else string."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise OverrideError(key, f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        node: Any = doc
        for j, part in enumerate(parts[:-1]):
            node = _child(node, part, ".".join(parts[: j + 1]))
        last = parts[-1]
        if isinstance(node, list):
            idx = _index(node, last, key)
            node[idx] = value
        elif isinstance(node, dict) and last in node:
            node[last] = value
        else:
            raise OverrideError(key, "no such field")
    return doc


def _child(node: Any, part: str, path: str) -> Any:
    if isinstance(node, list):
        return node[_index(node, part, path)]
    if isinstance(node, dict) and part in node:
        return node[part]
    raise OverrideError(path, "no such field")


def _index(node: list, part: str, path: str) -> int:
    try:
        idx = int(part)
    except ValueError:
        raise OverrideError(path, "list index expected") from None
    if not -len(node) <= idx < len(node):
        raise OverrideError(path, "list index out of range")
    return idx


def reference_document() -> dict:
    return json.loads(reference_text())


def reference_text() -> str:
    return resources.files("mergesim").joinpath("data/castelldefels.json").read_text(encoding="utf-8")
