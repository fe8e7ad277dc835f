"""Single-hop broadcast over a unit-disc ad-hoc channel."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from mergesim.engine import EntityId
from mergesim.world import EARTH_RADIUS_M, GeoPoint, geo_distance


@dataclass(frozen=True)
class RadioConfig:
    range_m: float = 300.0
    latency_ns: int = 900_000
    loss_prob: float = 0.0
    power_mw: float = 50.0
    channel: str = "CCH"

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError("radio range must be > 0")
        if self.latency_ns < 0:
            raise ValueError("radio latency must be >= 0")
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss probability must lie in [0, 1)")


class MessageKind(str, Enum):
    BEACON = "Beacon"
    CONTROL = "Control"


@dataclass(frozen=True)
class V2XEnvelope:
    msg_id: int
    kind: MessageKind
    sender: EntityId
    sender_pos: GeoPoint
    sent_at: int
    payload: Any
    # informational geocast area (center, radius_m); delivery ignores it
    destination: tuple[GeoPoint, float] | None = None


@dataclass(frozen=True)
class Delivery:
    receiver: EntityId
    receiver_pos: GeoPoint
    deliver_at: int


@dataclass
class BroadcastResult:
    delivered: list[Delivery] = field(default_factory=list)
    dropped: list[Delivery] = field(default_factory=list)

    @property
    def expected(self) -> int:
        return len(self.delivered) + len(self.dropped)


def in_range(a: GeoPoint, b: GeoPoint, cfg: RadioConfig) -> bool:
    return geo_distance(a, b) <= cfg.range_m


def broadcast(
    env: V2XEnvelope,
    cfg: RadioConfig,
    nodes: Iterable[tuple[EntityId, GeoPoint]],
    loss: random.Random | None = None,
) -> BroadcastResult:
    """Deliver ``env`` to every other node within range of the sender.

    Loss is one independent Bernoulli draw per in-range receiver, consumed in
    node iteration order. Receivers never relay.
    """
    out = BroadcastResult()
    deliver_at = env.sent_at + cfg.latency_ns
    src = env.sender_pos
    phi1, cos1, lam1 = src.radians
    # compare haversine terms instead of distances: a <= sin^2(range / 2R)
    limit = math.sin(min(math.pi, cfg.range_m / EARTH_RADIUS_M) / 2) ** 2
    draw_loss = cfg.loss_prob > 0.0 and loss is not None
    for node, pos in nodes:
        if node == env.sender:
            continue
        phi2, cos2, lam2 = pos.radians
        a = math.sin((phi2 - phi1) / 2) ** 2 + cos1 * cos2 * math.sin((lam2 - lam1) / 2) ** 2
        if a > limit * (1 + 1e-9):
            continue
        # near the boundary defer to geo_distance so in_range() agrees exactly
        if a >= limit * (1 - 1e-9) and geo_distance(src, pos) > cfg.range_m:
            continue
        d = Delivery(node, pos, deliver_at)
        if draw_loss and loss.random() < cfg.loss_prob:
            out.dropped.append(d)
        else:
            out.delivered.append(d)
    return out
