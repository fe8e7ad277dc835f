"""Geodesy and road geometry for the merge scenario.

Everything here is static: WGS84 points, a local equirectangular projection,
route polylines and the rectangular merge/event zone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Sequence

EARTH_RADIUS_M = 6371008.8


class InvalidInput(ValueError):
    """Coordinates or arguments outside their valid domain."""


class RouteOverrun(ValueError):
    """Arc length lies outside ``[0, route.length_m]``."""


class RouteLabel(str, Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvalidInput(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInput(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidInput(f"longitude {self.lon} outside [-180, 180]")

    def __str__(self) -> str:
        return f"GeoPoint{{lat|lon=[{self.lat:.6f},{self.lon:.6f}]}}"

    @cached_property
    def radians(self) -> tuple[float, float, float]:
        """``(phi, cos(phi), lambda)``, cached for repeated distance checks."""
        phi = math.radians(self.lat)
        return phi, math.cos(phi), math.radians(self.lon)


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float


@dataclass(frozen=True)
class Projection:
    center: GeoPoint
    offset_x: float = 0.0
    offset_y: float = 0.0


def project(p: GeoPoint, proj: Projection) -> PlanarPoint:
    """Equirectangular tangent-plane projection around ``proj.center``."""
    c = proj.center
    if abs(p.lat - c.lat) > 1.0 or abs(p.lon - c.lon) > 1.0:
        raise InvalidInput(f"{p} is more than 1 degree from projection center {c}")
    x = EARTH_RADIUS_M * math.cos(math.radians(c.lat)) * math.radians(p.lon - c.lon)
    y = EARTH_RADIUS_M * math.radians(p.lat - c.lat)
    return PlanarPoint(x + proj.offset_x, y + proj.offset_y)


def unproject(q: PlanarPoint, proj: Projection) -> GeoPoint:
    c = proj.center
    x = q.x - proj.offset_x
    y = q.y - proj.offset_y
    lat = c.lat + math.degrees(y / EARTH_RADIUS_M)
    lon = c.lon + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(c.lat))))
    return GeoPoint(lat, lon)


def geo_distance(p1: GeoPoint, p2: GeoPoint) -> float:
    """Haversine great-circle distance in meters."""
    phi1 = math.radians(p1.lat)
    phi2 = math.radians(p2.lat)
    dphi = phi2 - phi1
    dlam = math.radians(p2.lon - p1.lon)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def _interpolate(p1: GeoPoint, p2: GeoPoint, frac: float) -> GeoPoint:
    # intermediate point on the great circle, proportional to arc length
    if frac <= 0.0:
        return p1
    if frac >= 1.0:
        return p2
    delta = geo_distance(p1, p2) / EARTH_RADIUS_M
    if delta == 0.0:
        return p1
    phi1, lam1 = math.radians(p1.lat), math.radians(p1.lon)
    phi2, lam2 = math.radians(p2.lat), math.radians(p2.lon)
    a = math.sin((1 - frac) * delta) / math.sin(delta)
    b = math.sin(frac * delta) / math.sin(delta)
    x = a * math.cos(phi1) * math.cos(lam1) + b * math.cos(phi2) * math.cos(lam2)
    y = a * math.cos(phi1) * math.sin(lam1) + b * math.cos(phi2) * math.sin(lam2)
    z = a * math.sin(phi1) + b * math.sin(phi2)
    return GeoPoint(math.degrees(math.atan2(z, math.hypot(x, y))), math.degrees(math.atan2(y, x)))


@dataclass(frozen=True)
class GeoRectangle:
    corner_a: GeoPoint
    corner_b: GeoPoint

    @property
    def lat_bounds(self) -> tuple[float, float]:
        return min(self.corner_a.lat, self.corner_b.lat), max(self.corner_a.lat, self.corner_b.lat)

    @property
    def lon_bounds(self) -> tuple[float, float]:
        return min(self.corner_a.lon, self.corner_b.lon), max(self.corner_a.lon, self.corner_b.lon)


def contains(rect: GeoRectangle, p: GeoPoint) -> bool:
    lat_lo, lat_hi = rect.lat_bounds
    lon_lo, lon_hi = rect.lon_bounds
    return lat_lo <= p.lat <= lat_hi and lon_lo <= p.lon <= lon_hi


@dataclass(frozen=True)
class Route:
    id: str
    label: RouteLabel
    polyline: tuple[GeoPoint, ...]
    length_m: float = field(init=False)
    _cumulative: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise InvalidInput(f"route {self.id!r} needs at least two points")
        object.__setattr__(self, "polyline", tuple(self.polyline))
        object.__setattr__(self, "label", RouteLabel(self.label))
        cum = [0.0]
        for p, q in zip(self.polyline, self.polyline[1:]):
            cum.append(cum[-1] + geo_distance(p, q))
        object.__setattr__(self, "_cumulative", tuple(cum))
        object.__setattr__(self, "length_m", cum[-1])


def position_on_route(route: Route, s: float) -> GeoPoint:
    if not 0.0 <= s <= route.length_m:
        raise RouteOverrun(f"s={s} outside route {route.id!r} of length {route.length_m:.3f} m")
    cum = route._cumulative
    # bisect for the segment holding s
    lo, hi = 0, len(cum) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cum[mid] <= s:
            lo = mid
        else:
            hi = mid
    seg_len = cum[hi] - cum[lo]
    frac = 0.0 if seg_len == 0.0 else (s - cum[lo]) / seg_len
    return _interpolate(route.polyline[lo], route.polyline[hi], frac)


def zone_entry(route: Route, rect: GeoRectangle, resolution_m: float = 0.5) -> float | None:
    """First arc length at which the route lies inside ``rect``.

    Scans at ``resolution_m`` then bisects to millimeter precision. Returns
    None when the route never touches the rectangle.
    """
    if contains(rect, route.polyline[0]):
        return 0.0
    n = max(1, math.ceil(route.length_m / resolution_m))
    prev = 0.0
    for i in range(1, n + 1):
        s = min(route.length_m, i * resolution_m)
        if contains(rect, position_on_route(route, s)):
            lo, hi = prev, s
            while hi - lo > 1e-3:
                mid = 0.5 * (lo + hi)
                if contains(rect, position_on_route(route, mid)):
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = s
    return None


@dataclass(frozen=True)
class RoadNetwork:
    routes: tuple[Route, ...]
    merge_zone: GeoRectangle
    rsu_position: GeoPoint

    def route(self, route_id: str) -> Route:
        for r in self.routes:
            if r.id == route_id:
                return r
        raise KeyError(route_id)

    def by_label(self, label: RouteLabel | str) -> Route:
        label = RouteLabel(label)
        for r in self.routes:
            if r.label is label:
                return r
        raise KeyError(label)


def polyline_from_pairs(pairs: Sequence[Sequence[float]]) -> tuple[GeoPoint, ...]:
    return tuple(GeoPoint(float(lat), float(lon)) for lat, lon in pairs)
