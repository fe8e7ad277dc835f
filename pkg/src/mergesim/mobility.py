"""Vehicle spawning and longitudinal car-following.

Speed commands never force a speed; they install a *ceiling* that ramps
linearly from the speed at issue time to a target. Several ceilings can be
active at once (one per issuing source) and the lowest one wins.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from mergesim.engine import NS_PER_S, EntityId
from mergesim.world import RouteLabel


@dataclass(frozen=True)
class VehiclePrototype:
    accel: float = 2.6
    decel: float = 4.5
    length: float = 5.0
    max_speed: float = 20.0
    min_gap: float = 2.5
    sigma: float = 0.5
    tau: float = 1.0
    name: str = "PKW"

    def __post_init__(self):
        for f in ("accel", "decel", "length", "max_speed", "min_gap", "tau"):
            if not getattr(self, f) > 0:
                raise ValueError(f"prototype.{f} must be positive, got {getattr(self, f)}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"prototype.sigma must lie in [0, 1], got {self.sigma}")


class CommandKind(str, Enum):
    SLOW_DOWN = "SlowDown"
    CHANGE_SPEED_WITH_INTERVAL = "ChangeSpeedWithInterval"
    STOP = "Stop"
    RESET_SPEED = "ResetSpeed"


@dataclass(frozen=True)
class SpeedCommand:
    """A speed instruction as issued by an application.

    ``interval_ns`` is ignored for ``Stop`` (the ramp length follows from
    ``decel``) and ``ResetSpeed``. ``source`` names the slot the command
    occupies; commands from different sources coexist. An empty source means
    the slot named after the command kind.
    """

    kind: CommandKind
    target_speed: float = 0.0
    interval_ns: int = 0
    issued_at: int = 0
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", CommandKind(self.kind))
        if self.target_speed < 0:
            raise ValueError("target_speed must be >= 0")
        ramped = (CommandKind.SLOW_DOWN, CommandKind.CHANGE_SPEED_WITH_INTERVAL)
        if self.kind in ramped and self.interval_ns <= 0:
            raise ValueError(f"{self.kind.value} needs a positive interval")

    @property
    def slot(self) -> str:
        return self.source or self.kind.value


@dataclass(frozen=True)
class Ceiling:
    """An installed speed ceiling ramping from ``start_speed`` to ``target``."""

    kind: CommandKind
    start_speed: float
    target: float
    start_ns: int
    duration_ns: int

    def at(self, now_ns: int) -> float:
        if self.duration_ns <= 0 or now_ns >= self.start_ns + self.duration_ns:
            return self.target
        frac = max(0, now_ns - self.start_ns) / self.duration_ns
        return self.start_speed + (self.target - self.start_speed) * frac


@dataclass(frozen=True)
class VehicleState:
    id: EntityId
    route: str
    label: RouteLabel
    s: float
    speed: float
    prototype: VehiclePrototype
    spawned_at: int = 0
    ceilings: Mapping[str, Ceiling] = field(default_factory=dict)

    def ceiling_at(self, now_ns: int) -> float:
        c = self.prototype.max_speed
        for ceil in self.ceilings.values():
            c = min(c, ceil.at(now_ns))
        return c

    def has(self, slot: str) -> bool:
        return slot in self.ceilings


@dataclass(frozen=True)
class FlowSpec:
    route_id: str
    starting_time_s: float
    flow_veh_per_h: float
    max_vehicles: int
    prototype: VehiclePrototype = VehiclePrototype()

    def __post_init__(self):
        if not self.flow_veh_per_h > 0:
            raise ValueError("flow must be > 0 vehicles/hour")
        if self.max_vehicles < 1:
            raise ValueError("max_vehicles must be >= 1")

    @property
    def headway_ns(self) -> int:
        return round(3600 * NS_PER_S / self.flow_veh_per_h)


def spawn_schedule(flow: FlowSpec, end_ns: int | None = None) -> list[int]:
    """Nominal spawn instants (ns) with uniform headway 3600/flow seconds.

    Entry-occupancy deferral is applied by the engine at insertion time; this
    is the undisturbed timetable.
    """
    first = round(flow.starting_time_s * NS_PER_S)
    times = []
    for k in range(flow.max_vehicles):
        t = first + k * flow.headway_ns
        if end_ns is not None and t > end_ns:
            break
        times.append(t)
    return times


def safe_speed(gap: float, leader_speed: float, proto: VehiclePrototype) -> float:
    b, tau = proto.decel, proto.tau
    g = max(0.0, gap - proto.min_gap)
    return -b * tau + math.sqrt(b * b * tau * tau + leader_speed * leader_speed + 2 * b * g)


def step(
    v: VehicleState,
    leader: VehicleState | None,
    dt: float,
    noise: random.Random | None = None,
    now_ns: int | None = None,
) -> VehicleState:
    """One Krauss update of ``v`` over ``dt`` seconds.

    ``now_ns`` is the time at the end of the step and is used to evaluate
    speed ceilings; without it ceilings are ignored.
    """
    p = v.prototype
    desired = min(v.speed + p.accel * dt, p.max_speed)
    if leader is not None:
        gap = leader.s - leader.prototype.length - v.s
        desired = min(desired, safe_speed(max(0.0, gap), leader.speed, p))
    if now_ns is not None:
        desired = min(desired, v.ceiling_at(now_ns))
    xi = noise.random() if (noise is not None and p.sigma > 0) else 0.0
    speed = max(0.0, desired - p.sigma * p.accel * xi * dt)
    return replace(v, speed=speed, s=v.s + speed * dt)


def apply_command(v: VehicleState, cmd: SpeedCommand, now_ns: int) -> VehicleState:
    ceilings = dict(v.ceilings)
    slot = cmd.slot
    if cmd.kind is CommandKind.RESET_SPEED:
        if cmd.source:
            ceilings.pop(slot, None)
        else:
            ceilings.clear()
        return replace(v, ceilings=ceilings)

    existing = ceilings.get(slot)
    if existing is not None and existing.kind is cmd.kind and existing.target == cmd.target_speed:
        return v  # same ceiling already installed

    start = min(v.speed, v.ceiling_at(now_ns))
    if cmd.kind is CommandKind.STOP:
        target = 0.0
        duration = round(start / v.prototype.decel * NS_PER_S)
    else:
        target = cmd.target_speed
        duration = cmd.interval_ns
    ceilings[slot] = Ceiling(cmd.kind, start, target, now_ns, duration)
    return replace(v, ceilings=ceilings)


def braking_distance(speed: float, decel: float) -> float:
    return speed * speed / (2 * decel)


@dataclass
class PlatoonStep:
    vehicles: list[VehicleState]
    collisions: list[tuple[EntityId, EntityId, float]]


def advance_route(
    vehicles: Iterable[VehicleState],
    dt: float,
    noise: random.Random | None,
    now_ns: int,
) -> PlatoonStep:
    """Advance all vehicles of one route, front to back.

    Krauss uses the leader's state at the start of the step; the follower is
    then clamped so it never passes the leader's new rear bumper.
    """
    ordered = sorted(vehicles, key=lambda x: (-x.s, x.id.index))
    out: list[VehicleState] = []
    collisions = []
    prev_old: VehicleState | None = None
    prev_new: VehicleState | None = None
    for v in ordered:
        if prev_old is not None and prev_old.s - prev_old.prototype.length - v.s < 0:
            collisions.append((v.id, prev_old.id, prev_old.s - prev_old.prototype.length - v.s))
        nv = step(v, prev_old, dt, noise, now_ns)
        if prev_new is not None:
            limit = prev_new.s - prev_new.prototype.length
            if nv.s > limit:
                speed = max(0.0, (limit - v.s) / dt)
                nv = replace(nv, speed=speed, s=v.s + speed * dt)
        out.append(nv)
        prev_old, prev_new = v, nv
    return PlatoonStep(out, collisions)
