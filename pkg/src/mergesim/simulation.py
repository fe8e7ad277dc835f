"""Event loop wiring mobility, radio, events and applications together."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

from mergesim.apps import (
    MERGE_SLOT,
    CastelldefelsRsuApp,
    ControlMessage,
    NetworkMergeAssistApp,
    RsuState,
    SensorLatches,
    SlowDownApp,
)
from mergesim.engine import (
    MESSAGE_HEADER,
    POSITION_HEADER,
    CsvTrace,
    EntityId,
    RandomStreams,
    Scheduler,
    SimEvent,
    TraceLog,
    assign_address,
    rsu,
    veh,
)
from mergesim.mobility import SpeedCommand, VehicleState, advance_route, apply_command, spawn_schedule
from mergesim.radio import MessageKind, V2XEnvelope, broadcast
from mergesim.scenario import Scenario
from mergesim.world import GeoPoint, RouteOverrun, position_on_route


ENTITY_HEADER = ("entity", "kind", "address", "route_id", "label", "spawned_ns", "despawned_ns")


@dataclass
class SimulationReport:
    end_ns: int
    vehicles_spawned: dict[str, int] = field(default_factory=dict)
    messages_sent: int = 0
    messages_delivered: int = 0
    messages_dropped: int = 0
    stop_commands: int = 0
    drive_commands: int = 0
    collisions: int = 0
    events_scheduled: int = 0
    events_dispatched: int = 0
    events_cancelled: int = 0
    events_remaining: int = 0
    paths: dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _fmt(x: float) -> str:
    return repr(float(x))


@lru_cache(maxsize=8192)
def _coords(p: GeoPoint) -> tuple[str, str]:
    return repr(p.lat), repr(p.lon)


class Simulation:
    """One run of a scenario. Call :meth:`run` once."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        cfg = scenario.simulation
        self.sched = Scheduler(cfg.start_ns)
        self.rng = RandomStreams(cfg.random_seed)
        self.log = TraceLog()
        self.positions = CsvTrace(POSITION_HEADER)
        self.messages = CsvTrace(MESSAGE_HEADER)
        self.entities = CsvTrace(ENTITY_HEADER)

        self.vehicles: dict[EntityId, VehicleState] = {}
        self.node_positions: dict[EntityId, GeoPoint] = {}
        self.apps: dict[EntityId, dict[str, Any]] = {}
        self.addresses: dict[EntityId, str] = {}
        self._entity_rows: dict[EntityId, list] = {}
        self._pending_app_events: dict[EntityId, list[SimEvent]] = {}
        self._pending_spawns: list[deque[int]] = [deque() for _ in scenario.flows]
        self._next_vehicle = 0
        self._msg_id = 0
        self.report = SimulationReport(end_ns=cfg.end_ns)
        self._ran = False

    @property
    def now(self) -> int:
        return self.sched.now

    # --- scheduling helpers -------------------------------------------------

    def schedule_app(self, entity: EntityId, app: str, what: str, at: int) -> None:
        ev = self.sched.at(at, "app", entity, (app, what))
        pending = self._pending_app_events.setdefault(entity, [])
        pending[:] = [e for e in pending if not (e.cancelled or e.fired)]
        pending.append(ev)

    # --- radio --------------------------------------------------------------

    def send(self, sender: EntityId, kind: MessageKind, payload: Any, destination=None) -> V2XEnvelope:
        self._msg_id += 1
        pos = self.node_positions[sender]
        env = V2XEnvelope(self._msg_id, kind, sender, pos, self.now, payload, destination)
        if isinstance(payload, ControlMessage):
            msg_type, to = payload.decision.label, str(payload.target)
            if payload.decision.label == "Stop":
                self.report.stop_commands += 1
            else:
                self.report.drive_commands += 1
        else:
            msg_type, to = kind.value, "*"
        self.messages.add(self.now, "send", env.msg_id, msg_type, sender, to, *_coords(pos))
        result = broadcast(env, self.scenario.radio, self.node_positions.items(), self.rng.stream("radio"))
        for d in result.dropped:
            self.messages.add(self.now, "drop", env.msg_id, msg_type, sender, d.receiver,
                              *_coords(d.receiver_pos))
        self.report.messages_sent += 1
        self.report.messages_dropped += len(result.dropped)
        if result.delivered:
            self.sched.at(self.now + self.scenario.radio.latency_ns, "deliver", None,
                          (env, msg_type, result.delivered))
        return env

    def _deliver(self, env: V2XEnvelope, msg_type: str, deliveries) -> None:
        add = self.messages.add
        now, msg_id, sender = self.now, env.msg_id, str(env.sender)
        for d in deliveries:
            add(now, "recv", msg_id, msg_type, sender, str(d.receiver), *_coords(d.receiver_pos))
            for app in self.apps.get(d.receiver, {}).values():
                app.receive(self, env)
        self.report.messages_delivered += len(deliveries)

    # --- vehicles -----------------------------------------------------------

    def command(self, vehicle: EntityId, cmd: SpeedCommand) -> None:
        v = self.vehicles.get(vehicle)
        if v is not None:
            self.vehicles[vehicle] = apply_command(v, cmd, self.now)

    def _entry_free(self, route_id: str, need: float) -> bool:
        for v in self.vehicles.values():
            if v.route == route_id and v.s - v.prototype.length < need:
                return False
        return True

    def _try_spawn(self, flow_idx: int) -> EntityId | None:
        """Insert a vehicle at the start of the flow's route if the entry is clear.

        Applications are not started here; see :meth:`_start_apps`.
        """
        flow = self.scenario.flows[flow_idx]
        proto = flow.prototype
        if not self._entry_free(flow.route_id, proto.min_gap + proto.length):
            return None
        route = self.scenario.network.route(flow.route_id)
        vid = veh(self._next_vehicle)
        self._next_vehicle += 1
        self.vehicles[vid] = VehicleState(vid, route.id, route.label, 0.0, 0.0, proto, spawned_at=self.now)
        pos = route.polyline[0]
        self.node_positions[vid] = pos
        self._register(vid, route.id, route.label.value)
        self.report.vehicles_spawned[route.id] = self.report.vehicles_spawned.get(route.id, 0) + 1
        self.positions.add(self.now, vid, route.id, _fmt(0.0), *_coords(pos), _fmt(0.0), "spawned")
        return vid

    def _spawn_due(self, flow_idxs) -> None:
        # every vehicle of this instant is on the road before any app starts,
        # so the first beacons see all of them
        started = []
        for i in flow_idxs:
            pending = self._pending_spawns[i]
            while pending:
                vid = self._try_spawn(i)
                if vid is None:
                    break
                pending.popleft()
                started.append(vid)
        self._start_apps(started)

    def _start_apps(self, vids: list[EntityId]) -> None:
        for vid in vids:
            latches = SensorLatches()
            self.apps[vid] = {
                SlowDownApp.name: SlowDownApp(vid, latches),
                NetworkMergeAssistApp.name: NetworkMergeAssistApp(vid, latches, self.scenario.network.rsu_position),
            }
        for vid in vids:
            for app in self.apps[vid].values():
                app.set_up(self)

    def _despawn(self, vid: EntityId, final: VehicleState) -> None:
        route = self.scenario.network.route(final.route)
        end = route.polyline[-1]
        self.positions.add(self.now, vid, final.route, _fmt(final.s), _fmt(end.lat), _fmt(end.lon),
                           _fmt(final.speed), "despawned")
        for app in self.apps.pop(vid, {}).values():
            app.tear_down(self)
        for ev in self._pending_app_events.pop(vid, []):
            self.sched.cancel(ev)
        self.vehicles.pop(vid, None)
        self.node_positions.pop(vid, None)
        self._entity_rows[vid][-1] = self.now

    def _register(self, eid: EntityId, route_id: str, label: str) -> None:
        addr = assign_address(eid, self.scenario.ip_pools)
        self.addresses[eid] = addr
        self._entity_rows[eid] = [str(eid), eid.kind.value, addr, route_id, label, self.now, ""]

    def _mobility_tick(self) -> None:
        now = self.now
        dt = self.scenario.simulation.mobility_step_ns / 1e9
        noise = self.rng.stream("mobility")
        by_route: dict[str, list[VehicleState]] = {}
        for v in self.vehicles.values():
            by_route.setdefault(v.route, []).append(v)
        moved: list[VehicleState] = []
        for route in self.scenario.network.routes:
            group = by_route.get(route.id)
            if not group:
                continue
            result = advance_route(group, dt, noise, now)
            for follower, leader, gap in result.collisions:
                self.report.collisions += 1
                self.log.warn(follower, NetworkMergeAssistApp.name,
                              f"Collision fault behind {leader} (gap {gap:.3f} m)", now)
            moved.extend(result.vehicles)

        for v in sorted(moved, key=lambda x: x.id):
            route = self.scenario.network.route(v.route)
            try:
                pos = position_on_route(route, v.s)
            except RouteOverrun:
                self._despawn(v.id, v)
                continue
            self.vehicles[v.id] = v
            self.node_positions[v.id] = pos

        self._spawn_due(range(len(self._pending_spawns)))

        for vid in sorted(self.vehicles):
            for name, app in list(self.apps.get(vid, {}).items()):
                hook = getattr(app, "after_update_vehicle_info", None)
                if hook is not None and vid in self.vehicles:
                    hook(self)

        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            if v.spawned_at == now:
                continue
            pos = self.node_positions[vid]
            self.positions.add(now, vid, v.route, _fmt(v.s), *_coords(pos),
                               _fmt(v.speed), _state_label(v))

    # --- main loop ----------------------------------------------------------

    def _dispatch(self, ev: SimEvent) -> None:
        if ev.kind == "mobility":
            self._mobility_tick()
        elif ev.kind == "spawn":
            for i in ev.data:
                self._pending_spawns[i].append(ev.fire_at)
            self._spawn_due(ev.data)
        elif ev.kind == "deliver":
            self._deliver(*ev.data)
        elif ev.kind == "app":
            app_name, what = ev.data
            app = self.apps.get(ev.target, {}).get(app_name)
            if app is not None:
                app.process_event(self, what)
        else:
            raise ValueError(f"unknown event kind {ev.kind!r}")

    def run(self, out_dir: str | Path | None = None) -> SimulationReport:
        if self._ran:
            raise RuntimeError("a Simulation instance runs once")
        self._ran = True
        sc = self.scenario
        cfg = sc.simulation
        # mobility ticks go first so they precede any other event at the same instant
        t = cfg.start_ns
        while t <= cfg.end_ns:
            self.sched.at(t, "mobility")
            t += cfg.mobility_step_ns
        due: dict[int, list[int]] = {}
        for i, flow in enumerate(sc.flows):
            for t in spawn_schedule(flow, cfg.end_ns):
                if t >= cfg.start_ns:
                    due.setdefault(t, []).append(i)
        for t in sorted(due):
            self.sched.at(t, "spawn", None, tuple(due[t]))

        for i, spec in enumerate(sc.rsus):
            rid = rsu(i)
            self.node_positions[rid] = spec.position
            self._register(rid, "", "")
            self.positions.add(self.now, rid, "", _fmt(0.0), _fmt(spec.position.lat), _fmt(spec.position.lon),
                               _fmt(0.0), "rsu")
            app = CastelldefelsRsuApp(RsuState(rid, spec.position, merge_zone=sc.merge_zone))
            self.apps[rid] = {app.name: app}
            app.set_up(self)

        self.sched.run(cfg.end_ns, self._dispatch)

        for eid in sorted(self.apps):
            for app in self.apps[eid].values():
                app.tear_down(self)

        r = self.report
        r.events_scheduled = self.sched.scheduled
        r.events_dispatched = self.sched.dispatched
        r.events_cancelled = self.sched.cancelled
        r.events_remaining = self.sched.remaining
        for row in self._entity_rows.values():
            self.entities.add(*row)
        if out_dir is not None:
            self.write(Path(out_dir))
        return r

    def write(self, out_dir: Path) -> None:
        run_id = self.scenario.simulation.id
        logs_root = out_dir / "logs" / run_id
        self.log.write(logs_root)
        traces = out_dir / "traces"
        paths = {
            "logs": logs_root,
            "positions": self.positions.write(traces / "positions.csv"),
            "messages": self.messages.write(traces / "messages.csv"),
            "entities": self.entities.write(traces / "entities.csv"),
        }
        self.report.paths = {k: str(v) for k, v in paths.items()}


def _state_label(v: VehicleState) -> str:
    parts = []
    if MERGE_SLOT in v.ceilings:
        parts.append("stop")
    if len(v.ceilings) - (MERGE_SLOT in v.ceilings) > 0:
        parts.append("slowed")
    return "+".join(parts) or "free"


def run(scenario: Scenario, out_dir: str | Path | None = None) -> SimulationReport:
    return Simulation(scenario).run(out_dir)
