"""Roadside-unit merge arbitration and the two vehicle applications.

The arbitration core is a set of pure functions over ``RsuState``; the
``*App`` classes wrap them with logging and radio I/O against the
simulation context.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import TYPE_CHECKING, Mapping

from mergesim.engine import NS_PER_S, EntityId, EntityKind
from mergesim.events import SensorType, sensor_state
from mergesim.mobility import CommandKind, SpeedCommand
from mergesim.radio import MessageKind, V2XEnvelope
from mergesim.world import GeoPoint, GeoRectangle, RouteLabel, contains

if TYPE_CHECKING:
    from mergesim.simulation import Simulation

BEACON_INTERVAL_NS = 2 * NS_PER_S
BEACON_TTL_NS = 5 * NS_PER_S
SAMPLE_INTERVAL_NS = 2 * NS_PER_S
SLOW_DOWN_INTERVAL_NS = 80_000_000
HAZARD_SPEED = 6.9444444444444445
HAZARD_INTERVAL_NS = 5_000_000_000
GEOCAST_RADIUS_M = 3000.0

MERGE_SLOT = "merge"
SENSOR_SLOT = "sensor"
SLOWDOWN_SLOT = "slowdown"


class Decision(IntEnum):
    STOP = 0
    DRIVE = 1

    @property
    def label(self) -> str:
        return "Drive" if self is Decision.DRIVE else "Stop"


class ControlReason(str, Enum):
    MERGE_PRIORITY = "MergePriority"
    FALLBACK = "Fallback"
    CLEARED = "Cleared"


@dataclass(frozen=True)
class BeaconMessage:
    vehicle: EntityId
    position: GeoPoint
    route_label: RouteLabel
    speed: float
    sent_at: int


@dataclass(frozen=True)
class QueuedBeacon:
    beacon: BeaconMessage
    received_at: int
    expires_at: int


@dataclass(frozen=True)
class ControlMessage:
    issuer: EntityId
    target: EntityId
    decision: Decision
    reason: ControlReason
    sent_at: int


@dataclass(frozen=True)
class RsuState:
    id: EntityId
    position: GeoPoint
    queue: tuple[QueuedBeacon, ...] = ()
    last_decision: Mapping[EntityId, Decision] = field(default_factory=dict)
    beacon_ttl_ns: int = BEACON_TTL_NS
    sample_interval_ns: int = SAMPLE_INTERVAL_NS
    merge_zone: GeoRectangle | None = None
    seen_in_zone: frozenset[EntityId] = frozenset()
    cleared: frozenset[EntityId] = frozenset()


def purge(state: RsuState, now: int) -> RsuState:
    """Drop queued beacons whose expiry is at or before ``now``."""
    live = tuple(q for q in state.queue if q.expires_at > now)
    if len(live) == len(state.queue):
        return state
    return replace(state, queue=live)


def rsu_arbitrate(state: RsuState, vehicle: EntityId, label: RouteLabel | str) -> Decision:
    # route B has priority; A may go only while no B beacon is queued
    if RouteLabel(label) is RouteLabel.B:
        return Decision.DRIVE
    return Decision.DRIVE if not state.queue else Decision.STOP


def _track_zone(state: RsuState, b: BeaconMessage) -> RsuState:
    if state.merge_zone is None:
        return state
    if contains(state.merge_zone, b.position):
        if b.vehicle not in state.seen_in_zone:
            return replace(state, seen_in_zone=state.seen_in_zone | {b.vehicle})
    elif b.vehicle in state.seen_in_zone and b.vehicle not in state.cleared:
        return replace(state, cleared=state.cleared | {b.vehicle})
    return state


def rsu_on_beacon(
    state: RsuState, b: BeaconMessage, now: int
) -> tuple[RsuState, ControlMessage | None]:
    """Handle one received beacon and decide the reply, if any.

    A vehicle already seen inside the merge zone and now outside it has
    finished merging: it gets no further arbitration, only a releasing Drive
    if it was last told to stop.
    """
    state = _track_zone(purge(state, now), b)
    if b.route_label is RouteLabel.B:
        kept = tuple(q for q in state.queue if q.beacon.vehicle != b.vehicle)
        entry = QueuedBeacon(b, now, now + state.beacon_ttl_ns)
        state = replace(state, queue=kept + (entry,))

    if b.vehicle in state.cleared:
        if state.last_decision.get(b.vehicle) is not Decision.STOP:
            return state, None
        decision, reason = Decision.DRIVE, ControlReason.CLEARED
    else:
        decision, reason = rsu_arbitrate(state, b.vehicle, b.route_label), ControlReason.MERGE_PRIORITY

    last = dict(state.last_decision)
    last[b.vehicle] = decision
    state = replace(state, last_decision=last)
    return state, ControlMessage(state.id, b.vehicle, decision, reason, now)


def rsu_tick(state: RsuState, now: int) -> tuple[RsuState, list[ControlMessage]]:
    """Periodic sample: release every stopped vehicle once the queue is empty."""
    state = purge(state, now)
    if state.queue:
        return state, []
    stopped = sorted(v for v, d in state.last_decision.items() if d is Decision.STOP)
    if not stopped:
        return state, []
    last = dict(state.last_decision)
    msgs = []
    for v in stopped:
        last[v] = Decision.DRIVE
        msgs.append(ControlMessage(state.id, v, Decision.DRIVE, ControlReason.MERGE_PRIORITY, now))
    return replace(state, last_decision=last), msgs


def vehicle_on_control(vehicle: EntityId, c: ControlMessage) -> SpeedCommand | None:
    if c.target != vehicle:
        return None
    if c.decision is Decision.STOP:
        return SpeedCommand(CommandKind.STOP, 0.0, issued_at=c.sent_at, source=MERGE_SLOT)
    return SpeedCommand(CommandKind.RESET_SPEED, issued_at=c.sent_at, source=MERGE_SLOT)


def new_speed(sensor_type: SensorType | str | None) -> float:
    if sensor_type == SensorType.SPEED:
        return 2.0
    if sensor_type == SensorType.DIRECTION:
        return 8.0
    return 10.0


def merge_assist_react(
    slowed: bool, sensor_type: SensorType | None, strength: int, now: int
) -> tuple[bool, SpeedCommand | None]:
    """Sensor fallback of the merge-assist app: latch a slow-down on entry."""
    if strength > 0 and not slowed:
        cmd = SpeedCommand(
            CommandKind.SLOW_DOWN, new_speed(sensor_type), SLOW_DOWN_INTERVAL_NS, now, SENSOR_SLOT
        )
        return True, cmd
    if strength == 0 and slowed:
        return False, SpeedCommand(CommandKind.RESET_SPEED, issued_at=now, source=SENSOR_SLOT)
    return slowed, None


def slow_down_app_react(hazardous: bool, strength: int, now: int) -> tuple[bool, SpeedCommand | None]:
    if strength > 0 and not hazardous:
        cmd = SpeedCommand(
            CommandKind.CHANGE_SPEED_WITH_INTERVAL, HAZARD_SPEED, HAZARD_INTERVAL_NS, now, SLOWDOWN_SLOT
        )
        return True, cmd
    if strength == 0 and hazardous:
        return False, SpeedCommand(CommandKind.RESET_SPEED, issued_at=now, source=SLOWDOWN_SLOT)
    return hazardous, None


@dataclass
class SensorLatches:
    slowed: bool = False
    hazardous: bool = False


def vehicle_sense_and_react(
    latches: SensorLatches,
    sensor_type: SensorType | None,
    strength: int,
    now: int,
) -> list[SpeedCommand]:
    """Both vehicle apps' reaction to one sensor reading (latches updated in place)."""
    cmds = []
    latches.slowed, cmd = merge_assist_react(latches.slowed, sensor_type, strength, now)
    if cmd is not None:
        cmds.append(cmd)
    latches.hazardous, cmd = slow_down_app_react(latches.hazardous, strength, now)
    if cmd is not None:
        cmds.append(cmd)
    return cmds


def describe_position(p: GeoPoint) -> str:
    return f"InterVehicleMsg{{senderPosition={p}}}"


class CastelldefelsRsuApp:
    name = "CastelldefelsRSU"

    def __init__(self, state: RsuState):
        self.state = state

    def set_up(self, sim: "Simulation") -> None:
        sim.log.info(self.state.id, self.name, "Starting road side unit application", sim.now)
        sim.log.info(self.state.id, self.name, "Activating 802.11p AdHoc WiFi Module", sim.now)
        sim.schedule_app(self.state.id, self.name, "sample", sim.now)

    def process_event(self, sim: "Simulation", what: str) -> None:
        self.state, msgs = rsu_tick(self.state, sim.now)
        for m in msgs:
            self._send(sim, m)
        sim.schedule_app(self.state.id, self.name, "sample", sim.now + self.state.sample_interval_ns)

    def receive(self, sim: "Simulation", env: V2XEnvelope) -> None:
        if env.kind is not MessageKind.BEACON:
            return
        b: BeaconMessage = env.payload
        me = self.state.id
        sim.log.info(me, self.name, f"Received message from {env.sender}", sim.now)
        sim.log.info(me, self.name, f"Vehicle position confirmed as: {describe_position(env.sender_pos)}", sim.now)
        self.state, reply = rsu_on_beacon(self.state, b, sim.now)
        if reply is not None:
            self._send(sim, reply)

    def _send(self, sim: "Simulation", m: ControlMessage) -> None:
        sim.send(self.state.id, MessageKind.CONTROL, m)
        sim.log.info(self.state.id, self.name, "Sent DENM vehicle message", sim.now)
        sim.log.debug(self.state.id, self.name, f"Control {m.decision.label} to {m.target} ({m.reason.value})", sim.now)

    def tear_down(self, sim: "Simulation") -> None:
        sim.log.info(self.state.id, self.name, "Shutting down road side unit application", sim.now)


class NetworkMergeAssistApp:
    """Vehicle beaconing, control handling and the sensor fallback."""

    name = "NetworkMergeAssist"

    def __init__(self, vehicle: EntityId, latches: SensorLatches, hazard: GeoPoint | None = None):
        self.vehicle = vehicle
        self.latches = latches
        self.hazard = hazard

    def set_up(self, sim: "Simulation") -> None:
        sim.log.info(self.vehicle, self.name, "Activated 802.11p AdHoc WiFi Module", sim.now)
        self._sample(sim)

    def process_event(self, sim: "Simulation", what: str) -> None:
        self._sample(sim)

    def _sample(self, sim: "Simulation") -> None:
        v = sim.vehicles[self.vehicle]
        pos = sim.node_positions[self.vehicle]
        beacon = BeaconMessage(self.vehicle, pos, v.label, v.speed, sim.now)
        dest = (self.hazard, GEOCAST_RADIUS_M) if self.hazard is not None else None
        sim.send(self.vehicle, MessageKind.BEACON, beacon, destination=dest)
        sim.log.info(self.vehicle, self.name, "Sent DENM vehicle message", sim.now)
        sim.schedule_app(self.vehicle, self.name, "sample", sim.now + BEACON_INTERVAL_NS)

    def receive(self, sim: "Simulation", env: V2XEnvelope) -> None:
        if env.kind is not MessageKind.CONTROL:
            return
        c: ControlMessage = env.payload
        cmd = vehicle_on_control(self.vehicle, c)
        if cmd is None:
            return
        if c.issuer.kind is EntityKind.RSU:
            sim.log.info(self.vehicle, self.name, "Control message received from Roadside Unit", sim.now)
        sim.log.info(self.vehicle, self.name, "Processing control message", sim.now)
        sim.log.debug(self.vehicle, self.name, f"Control decision: {c.decision.label}", sim.now)
        sim.command(self.vehicle, cmd)

    def after_update_vehicle_info(self, sim: "Simulation") -> None:
        v = sim.vehicles[self.vehicle]
        pos = sim.node_positions.get(self.vehicle)
        if pos is None:
            sim.log.warn(self.vehicle, self.name, "No road position given, skip this event", sim.now)
            return
        sensor_type, strength = sensor_state(sim.scenario.events, pos, sim.now)
        if strength > 0:
            log = sim.log
            me, app, now = self.vehicle, self.name, sim.now
            log.info(me, app, f"Sensored {sensor_type.value} event detected, reducing speed to {new_speed(sensor_type)} m/s", now)
            log.info(me, app, f"Position: {pos}", now)
            log.info(me, app, f"SensorType to: {sensor_type.value}", now)
            log.info(me, app, f"CurrVehicle: route: {v.route}", now)
            log.debug(me, app, f"Event strength to: {strength}", now)
        self.latches.slowed, cmd = merge_assist_react(self.latches.slowed, sensor_type, strength, sim.now)
        if cmd is not None:
            sim.command(self.vehicle, cmd)

    def tear_down(self, sim: "Simulation") -> None:
        sim.log.info(self.vehicle, self.name, "Shutting down Merge Assist application", sim.now)


class SlowDownApp:
    name = "SlowDownApp"

    def __init__(self, vehicle: EntityId, latches: SensorLatches):
        self.vehicle = vehicle
        self.latches = latches

    def set_up(self, sim: "Simulation") -> None:
        pass

    def process_event(self, sim: "Simulation", what: str) -> None:
        pass

    def receive(self, sim: "Simulation", env: V2XEnvelope) -> None:
        pass

    def after_update_vehicle_info(self, sim: "Simulation") -> None:
        pos = sim.node_positions.get(self.vehicle)
        _, strength = sensor_state(sim.scenario.events, pos, sim.now) if pos else (None, 0)
        self.latches.hazardous, cmd = slow_down_app_react(self.latches.hazardous, strength, sim.now)
        if cmd is not None:
            sim.command(self.vehicle, cmd)

    def tear_down(self, sim: "Simulation") -> None:
        pass
