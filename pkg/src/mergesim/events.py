"""Environment event server: time-windowed rectangular sensor events."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from mergesim.engine import NS_PER_S
from mergesim.world import GeoPoint, GeoRectangle, contains


class SensorType(str, Enum):
    SPEED = "Speed"
    DIRECTION = "Direction"
    OTHER = "Other"


@dataclass(frozen=True)
class SensorEvent:
    type: SensorType
    rectangle: GeoRectangle
    strength: int
    start_s: float
    end_s: float

    def __post_init__(self):
        object.__setattr__(self, "type", SensorType(self.type))
        if self.strength < 1:
            raise ValueError(f"event strength must be >= 1, got {self.strength}")
        if self.start_s > self.end_s:
            raise ValueError(f"event window start {self.start_s} > end {self.end_s}")

    def active(self, now_ns: int) -> bool:
        # compare in ns so the closed bounds are exact
        return round(self.start_s * NS_PER_S) <= now_ns <= round(self.end_s * NS_PER_S)


def sensor_state(
    events: Sequence[SensorEvent], pos: GeoPoint, now_ns: int
) -> tuple[SensorType | None, int]:
    """First matching event's ``(type, strength)`` in declaration order.

    Returns ``(None, 0)`` when nothing matches.
    """
    for ev in events:
        if ev.active(now_ns) and contains(ev.rectangle, pos):
            return ev.type, ev.strength
    return None, 0
