"""Deterministic discrete-event core.

Simulation time is an integer count of nanoseconds. Events dispatch in
``(fire_at, seq)`` order, so two runs of the same inputs replay identically.
"""
from __future__ import annotations

import heapq
import ipaddress
import random
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Iterable

NS_PER_S = 1_000_000_000
WALL_PLACEHOLDER = "0000-00-00 00:00:00,000"


def seconds_to_ns(seconds: float) -> int:
    return round(seconds * NS_PER_S)


def format_sim_time(ns: int) -> str:
    """Render ``ns`` the way the per-entity logs do: ``91.001,400,000``."""
    whole, frac = divmod(ns, NS_PER_S)
    digits = f"{frac:09d}"
    return f"{whole}.{digits[0:3]},{digits[3:6]},{digits[6:9]}"


class EntityKind(str, Enum):
    VEHICLE = "veh"
    RSU = "rsu"


_KIND_ORDER = {EntityKind.VEHICLE: 0, EntityKind.RSU: 1}


@dataclass(frozen=True)
class EntityId:
    kind: EntityKind
    index: int

    def __str__(self) -> str:
        return self.name

    @cached_property
    def name(self) -> str:
        return f"{self.kind.value}_{self.index}"

    def __lt__(self, other: "EntityId") -> bool:
        return (_KIND_ORDER[self.kind], self.index) < (_KIND_ORDER[other.kind], other.index)

    @classmethod
    def parse(cls, text: str) -> "EntityId":
        kind, _, idx = text.partition("_")
        return cls(EntityKind(kind), int(idx))


def veh(n: int) -> EntityId:
    return EntityId(EntityKind.VEHICLE, n)


def rsu(n: int) -> EntityId:
    return EntityId(EntityKind.RSU, n)


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


@dataclass
class SimEvent:
    fire_at: int
    target: EntityId | None
    kind: str
    data: Any = None
    seq: int = -1
    cancelled: bool = False
    fired: bool = False

    def __lt__(self, other: "SimEvent") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)


class Scheduler:
    def __init__(self, start_ns: int = 0):
        self.now = start_ns
        self._queue: list[SimEvent] = []
        self._seq = 0
        self.scheduled = 0
        self.dispatched = 0
        self.cancelled = 0

    def schedule(self, ev: SimEvent) -> SimEvent:
        if ev.fire_at < self.now:
            raise SchedulingError(
                f"event {ev.kind!r} at {ev.fire_at} ns scheduled in the past (now={self.now} ns)"
            )
        ev.seq = self._seq
        self._seq += 1
        self.scheduled += 1
        heapq.heappush(self._queue, ev)
        return ev

    def at(self, fire_at: int, kind: str, target: EntityId | None = None, data: Any = None) -> SimEvent:
        return self.schedule(SimEvent(fire_at, target, kind, data))

    def cancel(self, ev: SimEvent) -> None:
        """Withdraw a pending event; events already dispatched are left alone."""
        if not ev.cancelled and not ev.fired:
            ev.cancelled = True
            self.cancelled += 1

    @property
    def remaining(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run(self, until_ns: int, dispatch: Callable[[SimEvent], None]) -> None:
        """Dispatch every live event with ``fire_at <= until_ns``."""
        q = self._queue
        while q and q[0].fire_at <= until_ns:
            ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self.now = ev.fire_at
            ev.fired = True
            self.dispatched += 1
            dispatch(ev)
        self.now = max(self.now, until_ns)


class RandomStreams:
    """Named, independent generators keyed by ``(seed, stream name)``."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        if name not in self._streams:
            # str seeds are hashed with sha512: stable across platforms
            self._streams[name] = random.Random(f"{self.seed}/{name}")
        return self._streams[name]

    def next_random_unit(self, name: str) -> float:
        return self.stream(name).random()


class AddressPoolExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class IpPools:
    net_mask: str = "255.255.0.0"
    vehicle_net: str = "10.1.0.0"
    rsu_net: str = "10.2.0.0"


def assign_address(eid: EntityId, pools: IpPools) -> str:
    """Entity ``n`` gets the ``(n+1)``-th host of its kind's pool.

    Allocation is row-major over the last two octets with 254 usable hosts
    per row (.1 to .254), so veh_253 in 10.1.0.0 is 10.1.0.254 and veh_254
    carries to 10.1.1.1.
    """
    base = pools.vehicle_net if eid.kind is EntityKind.VEHICLE else pools.rsu_net
    net = ipaddress.IPv4Network(f"{base}/{pools.net_mask}", strict=False)
    host = _row_major_host(eid.index)
    if host >= net.num_addresses - 1:
        raise AddressPoolExhausted(f"no address left for {eid} in {net}")
    return str(net.network_address + host)


def _row_major_host(index: int) -> int:
    row, col = divmod(index, 254)
    return row * 256 + col + 1


class TraceLog:
    """Per-entity, per-application log lines buffered in dispatch order."""

    def __init__(self):
        self._lines: dict[tuple[str, str], list[str]] = defaultdict(list)

    def log(self, level: str, entity: EntityId, app: str, message: str, now: int) -> None:
        self._lines[(str(entity), app)].append(
            f"{WALL_PLACEHOLDER} {level} - {message} (at simulation time {format_sim_time(now)} s)"
        )

    def info(self, entity: EntityId, app: str, message: str, now: int) -> None:
        self.log("INFO", entity, app, message, now)

    def debug(self, entity: EntityId, app: str, message: str, now: int) -> None:
        self.log("DEBUG", entity, app, message, now)

    def warn(self, entity: EntityId, app: str, message: str, now: int) -> None:
        self.log("WARN", entity, app, message, now)

    def lines(self, entity: EntityId | str, app: str) -> list[str]:
        return list(self._lines.get((str(entity), app), []))

    def keys(self) -> Iterable[tuple[str, str]]:
        return self._lines.keys()

    def write(self, root: Path) -> list[Path]:
        paths = []
        for (entity, app), lines in sorted(self._lines.items()):
            path = root / entity / f"{app}.log"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            paths.append(path)
        return paths


@dataclass
class CsvTrace:
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row) -> None:
        self.rows.append(row)

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(self.header) + "\n")
            fh.writelines(",".join(map(str, r)) + "\n" for r in self.rows)
        return path


POSITION_HEADER = ("time_ns", "entity", "route_id", "s_m", "lat", "lon", "speed_mps", "state")
MESSAGE_HEADER = ("time_ns", "event", "msg_id", "msg_type", "from", "to", "lat", "lon")
