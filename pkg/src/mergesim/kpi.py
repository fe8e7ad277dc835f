"""Post-run analysis of the position and message traces.

Message KPIs (reliability, latency) are scored against the 3GPP Release 14
V2X use-case table. Merge-safety metrics look at A/B co-occupancy of the merge
zone and at how the RSU's Stop/Drive commands relate to it.

Traces are handled as pandas frames: the message trace of a full run has
millions of rows. The trace column ``from`` is renamed ``sender``.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np
import pandas as pd

from mergesim.engine import MESSAGE_HEADER, NS_PER_S, POSITION_HEADER
from mergesim.mobility import braking_distance
from mergesim.world import EARTH_RADIUS_M, GeoPoint, GeoRectangle, geo_distance, zone_entry

KMH_PER_MPS = 3.6
RSU_PREFIX = "rsu_"


@dataclass(frozen=True)
class UseCaseRequirement:
    name: str
    effective_distance_m: float
    max_speed_kmh: float
    max_relative_speed_kmh: float
    max_latency_ms: float
    min_reliability_pct: float


_TABLE = (
    ("Suburban Major Road", 200, 50, 100, 100, 90),
    ("Freeway/Motorway", 320, 160, 280, 100, 80),
    ("Autobahn", 320, 280, 280, 100, 80),
    ("NLOS/Urban", 150, 50, 100, 100, 90),
    ("Urban Intersection", 50, 50, 100, 100, 95),
    ("Campus / Shopping Area", 50, 30, 30, 100, 90),
    ("Imminent Crash", 20, 80, 160, 20, 95),
)


def builtin_requirements() -> list[UseCaseRequirement]:
    return [UseCaseRequirement(*row) for row in _TABLE]


def requirement(name: str) -> UseCaseRequirement:
    for r in builtin_requirements():
        if r.name.casefold() == name.casefold():
            return r
    known = ", ".join(r.name for r in builtin_requirements())
    raise KeyError(f"unknown requirement {name!r}; known: {known}")


class TraceFormatError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class MessageRow(NamedTuple):
    time_ns: int
    event: str
    msg_id: int
    msg_type: str
    sender: str
    to: str
    lat: float
    lon: float


class PositionRow(NamedTuple):
    time_ns: int
    entity: str
    route_id: str
    s_m: float
    lat: float
    lon: float
    speed_mps: float
    state: str


MESSAGE_COLUMNS = MessageRow._fields
POSITION_COLUMNS = PositionRow._fields
_MESSAGE_NUMERIC = {"time_ns": "int64", "msg_id": "int64", "lat": "float64", "lon": "float64"}
_POSITION_NUMERIC = {"time_ns": "int64", "s_m": "float64", "lat": "float64", "lon": "float64", "speed_mps": "float64"}
_EVENTS = ("send", "recv", "drop")


def _empty(columns, numeric) -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=numeric.get(c, object)) for c in columns})


def _fail_at(path: str, bad: np.ndarray, message: str):
    # row k of the frame sits on line k + 2 of the file (after the header)
    raise TraceFormatError(path, int(np.argmax(bad)) + 2, message)


def _read_csv(path: str | Path, header: tuple[str, ...], columns: tuple[str, ...], numeric) -> pd.DataFrame:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first:
        return _empty(columns, numeric)
    if tuple(first.rstrip("\r\n").split(",")) != header:
        raise TraceFormatError(path, 1, f"expected header {','.join(header)}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skiprows=1, header=None, names=list(columns))
    except pd.errors.ParserError as exc:
        raise TraceFormatError(path, _parser_line(str(exc)), str(exc)) from None
    short = df[columns[-1]].isna().to_numpy() | (df[columns[-1]] == "").to_numpy()
    if short.any():
        _fail_at(path, short, f"expected {len(columns)} fields")
    for col, dtype in numeric.items():
        conv = pd.to_numeric(df[col], errors="coerce")
        bad = conv.isna().to_numpy()
        if dtype == "int64" and not bad.any():
            bad = (conv != np.floor(conv)).to_numpy()
        if bad.any():
            _fail_at(path, bad, f"{col} is not a {dtype[:-2]}: {df[col].iloc[int(np.argmax(bad))]!r}")
        df[col] = conv.astype(dtype)
    return df


def _parser_line(message: str) -> int:
    # the C parser says "Expected 8 fields in line 3, saw 9", counting file lines
    words = message.replace(",", " ").split()
    for a, b in zip(words, words[1:]):
        if a == "line" and b.isdigit():
            return int(b)
    return 0


def read_messages(path: str | Path) -> pd.DataFrame:
    df = _read_csv(path, MESSAGE_HEADER, MESSAGE_COLUMNS, _MESSAGE_NUMERIC)
    bad = ~df["event"].isin(_EVENTS).to_numpy()
    if bad.any():
        _fail_at(str(path), bad, f"unknown message event {df['event'].iloc[int(np.argmax(bad))]!r}")
    return df


def read_positions(path: str | Path) -> pd.DataFrame:
    return _read_csv(path, POSITION_HEADER, POSITION_COLUMNS, _POSITION_NUMERIC)


def _messages(data) -> pd.DataFrame:
    """Accept a path, a frame or a sequence of MessageRow."""
    if isinstance(data, pd.DataFrame):
        return data
    if isinstance(data, (str, Path)):
        return read_messages(data)
    rows = list(data)
    return pd.DataFrame(rows, columns=list(MESSAGE_COLUMNS)) if rows else _empty(MESSAGE_COLUMNS, _MESSAGE_NUMERIC)


def _positions(data) -> pd.DataFrame:
    """Accept a path, a frame or a sequence of PositionRow."""
    if isinstance(data, pd.DataFrame):
        return data
    if isinstance(data, (str, Path)):
        return read_positions(data)
    rows = list(data)
    return pd.DataFrame(rows, columns=list(POSITION_COLUMNS)) if rows else _empty(POSITION_COLUMNS, _POSITION_NUMERIC)


def _sort_messages(msgs: pd.DataFrame) -> pd.DataFrame:
    return msgs.sort_values(["time_ns", "msg_id", "event", "to"], kind="mergesort", ignore_index=True)


def _sort_positions(positions: pd.DataFrame) -> pd.DataFrame:
    return positions.sort_values(["time_ns", "entity"], kind="mergesort", ignore_index=True)


@dataclass
class ConflictEpisode:
    a_vehicle: str
    b_vehicle: str
    start_ns: int
    end_ns: int
    # guarded: A entered under a Stop received beyond its braking distance
    # late: A entered under a Stop received inside its braking distance
    # unguarded: no Stop was in force when A entered
    classification: str = "unclassified"


@dataclass
class KpiReport:
    requirement: str
    messages_sent: int = 0
    delivered: int = 0
    dropped: int = 0
    expected: int = 0
    in_flight_at_end: int = 0
    reliability_pct: float = 100.0
    latency_p50_ms: float = 0.0
    latency_p95_ms: float = 0.0
    latency_max_ms: float = 0.0
    zone_conflicts: int = 0
    guarded_conflicts: int = 0
    late_conflicts: int = 0
    unguarded_conflicts: int = 0
    co_occupancy_s: float = 0.0
    min_merge_headway_s: float | None = None
    stop_commands: int = 0
    drive_commands: int = 0
    max_speed_kmh: float = 0.0
    max_relative_speed_kmh: float = 0.0
    latency_pass: bool = True
    reliability_pass: bool = True
    verdict: str = "pass"
    warnings: list[str] = field(default_factory=list)
    conflicts: list[ConflictEpisode] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceContext:
    """Optional scenario facts that sharpen the analysis."""

    route_labels: Mapping[str, str] = field(default_factory=dict)
    range_m: float | None = None
    decel: float | None = None
    zone_entry_s: Mapping[str, float] = field(default_factory=dict)
    # sends whose delivery would fall after the run end are still in flight
    end_ns: int | None = None
    latency_ns: int | None = None

    def in_flight(self, send_ns: pd.Series) -> pd.Series:
        if self.end_ns is None or self.latency_ns is None:
            return pd.Series(False, index=send_ns.index)
        return send_ns + self.latency_ns > self.end_ns

    @classmethod
    def from_scenario(cls, scenario) -> "TraceContext":
        zone = scenario.merge_zone
        entries = {}
        for r in scenario.network.routes:
            s = zone_entry(r, zone)
            if s is not None:
                entries[r.id] = s
        return cls(
            {r.id: r.label.value for r in scenario.network.routes},
            scenario.radio.range_m,
            scenario.prototype.decel,
            entries,
            scenario.simulation.end_ns,
            scenario.radio.latency_ns,
        )


def latencies(msgs: pd.DataFrame) -> pd.DataFrame:
    """The recv rows of ``msgs`` with a ``latency_ns`` column added."""
    sent = msgs.loc[msgs["event"] == "send"].set_index("msg_id")["time_ns"]
    recv = msgs.loc[msgs["event"] == "recv"]
    sent_ns = recv["msg_id"].map(sent)
    if sent_ns.isna().any():
        orphan = recv.loc[sent_ns.isna()].iloc[0]
        raise ValueError(f"recv of msg {orphan['msg_id']} at {orphan['time_ns']} ns has no send row")
    return recv.assign(latency_ns=recv["time_ns"].to_numpy(np.int64) - sent_ns.to_numpy(np.int64))


class _Snapshots:
    """Replays the position trace: which entities exist where at time ``t``."""

    def __init__(self, positions: pd.DataFrame):
        self.t = positions["time_ns"].to_numpy(np.int64)
        self.entity = positions["entity"].to_numpy()
        self.lat = positions["lat"].to_numpy(float)
        self.lon = positions["lon"].to_numpy(float)
        self.gone = (positions["state"] == "despawned").to_numpy()
        self.i = 0
        self.live: dict[str, tuple[float, float]] = {}
        self._arrays = None

    def advance(self, t: int) -> None:
        j = int(np.searchsorted(self.t, t, side="right"))
        if j == self.i:
            return
        for k in range(self.i, j):
            if self.gone[k]:
                self.live.pop(self.entity[k], None)
            else:
                self.live[self.entity[k]] = (float(self.lat[k]), float(self.lon[k]))
        self.i = j
        self._arrays = None

    def arrays(self):
        if self._arrays is None:
            names = list(self.live)
            ll = np.radians(np.array([self.live[n] for n in names], dtype=float).reshape(-1, 2))
            self._arrays = (names, ll[:, 0], np.cos(ll[:, 0]), ll[:, 1])
        return self._arrays


def expected_receptions(sends, positions, range_m: float) -> dict[int, int]:
    """In-range receiver count for every send, reconstructed from positions.

    Pairs near the range boundary are settled with the exact distance the
    radio itself uses.
    """
    sends = _messages(sends).sort_values(["time_ns", "msg_id"], kind="mergesort")
    snap = _Snapshots(_sort_positions(_positions(positions)))
    out = {}
    limit = math.sin(min(math.pi, range_m / EARTH_RADIUS_M) / 2) ** 2
    cols = zip(sends["time_ns"].tolist(), sends["msg_id"].tolist(), sends["sender"].tolist(),
               sends["lat"].tolist(), sends["lon"].tolist())
    for t, mid, sender, lat, lon in cols:
        snap.advance(t)
        names, phi, cphi, lam = snap.arrays()
        p1, l1 = math.radians(lat), math.radians(lon)
        a = np.sin((phi - p1) / 2) ** 2 + math.cos(p1) * cphi * np.sin((lam - l1) / 2) ** 2
        count = 0
        src = GeoPoint(lat, lon)
        for k in np.nonzero(a <= limit * (1 + 1e-6))[0]:
            name = names[k]
            if name == sender:
                continue
            if a[k] < limit * (1 - 1e-6) or geo_distance(src, GeoPoint(*snap.live[name])) <= range_m:
                count += 1
        out[mid] = count
    return out


def _vehicles(positions: pd.DataFrame) -> pd.DataFrame:
    return positions.loc[~positions["entity"].str.startswith(RSU_PREFIX)]


def _in_zone(rows: pd.DataFrame, zone: GeoRectangle) -> np.ndarray:
    lo_lat, hi_lat = zone.lat_bounds
    lo_lon, hi_lon = zone.lon_bounds
    lat, lon = rows["lat"].to_numpy(float), rows["lon"].to_numpy(float)
    inside = (lat >= lo_lat) & (lat <= hi_lat) & (lon >= lo_lon) & (lon <= hi_lon)
    return inside & (rows["state"] != "despawned").to_numpy()


def _zone_intervals(positions: pd.DataFrame, zone: GeoRectangle) -> dict[str, list[tuple[int, int]]]:
    """Per vehicle: list of (enter_ns, exit_ns) sampled from the trace rows."""
    rows = _vehicles(positions)
    flags = _in_zone(rows, zone)
    inside: dict[str, int] = {}
    spans: dict[str, list[tuple[int, int]]] = {}
    last_t: dict[str, int] = {}
    for t, ent, now_in in zip(rows["time_ns"].tolist(), rows["entity"].tolist(), flags.tolist()):
        if now_in and ent not in inside:
            inside[ent] = t
        elif not now_in and ent in inside:
            spans.setdefault(ent, []).append((inside.pop(ent), t))
        last_t[ent] = t
    for ent, t0 in inside.items():
        spans.setdefault(ent, []).append((t0, last_t[ent]))
    return spans


def _co_occupancy(spans, labels: Mapping[str, str]) -> list[ConflictEpisode]:
    a_spans = [(e, s) for e, ss in spans.items() if labels.get(e) == "A" for s in ss]
    b_spans = [(e, s) for e, ss in spans.items() if labels.get(e) == "B" for s in ss]
    out = []
    for a, (a0, a1) in a_spans:
        for b, (b0, b1) in b_spans:
            lo, hi = max(a0, b0), min(a1, b1)
            if lo < hi:
                out.append(ConflictEpisode(a, b, lo, hi))
    out.sort(key=lambda c: (c.start_ns, c.a_vehicle, c.b_vehicle))
    return out


def _targeted_controls(msgs: pd.DataFrame) -> pd.DataFrame:
    """Stop/Drive receptions by the vehicle each command was addressed to.

    Commands are broadcast; only the targeted vehicle acts on one. The send
    time is carried along as ``sent_ns``.
    """
    ctrl = msgs.loc[msgs["msg_type"].isin(("Stop", "Drive"))]
    sends = ctrl.loc[ctrl["event"] == "send"].set_index("msg_id")
    recv = ctrl.loc[ctrl["event"] == "recv"]
    target = recv["msg_id"].map(sends["to"])
    recv = recv.loc[(recv["to"] == target).to_numpy()]
    return recv.assign(sent_ns=recv["msg_id"].map(sends["time_ns"]))


def _classify(episodes: list[ConflictEpisode], spans, msgs: pd.DataFrame, positions: pd.DataFrame,
              ctx: TraceContext) -> None:
    if not episodes:
        return
    controls: dict[str, list[tuple[int, str]]] = {}
    ctrl = _targeted_controls(msgs)
    for t, to, kind in zip(ctrl["time_ns"].tolist(), ctrl["to"].tolist(), ctrl["msg_type"].tolist()):
        controls.setdefault(to, []).append((t, kind))
    wanted = {ep.a_vehicle for ep in episodes}
    tracks = {e: g for e, g in positions.loc[positions["entity"].isin(wanted)].groupby("entity", sort=False)}

    for ep in episodes:
        enter = max(t0 for t0, _ in spans[ep.a_vehicle] if t0 <= ep.start_ns)
        history = [c for c in controls.get(ep.a_vehicle, []) if c[0] <= enter]
        if not history or history[-1][1] != "Stop":
            ep.classification = "unguarded"
            continue
        track = tracks[ep.a_vehicle]
        k = max(int(np.searchsorted(track["time_ns"].to_numpy(), history[-1][0], side="right")) - 1, 0)
        state = track.iloc[k]
        entry_s = ctx.zone_entry_s.get(state["route_id"])
        if entry_s is None or ctx.decel is None:
            ep.classification = "unclassified"
            continue
        margin = entry_s - state["s_m"]
        ep.classification = "guarded" if margin >= braking_distance(state["speed_mps"], ctx.decel) else "late"


def _merge_headway(spans, labels: Mapping[str, str]) -> float | None:
    entries = sorted((t0, labels.get(e, "?")) for e, ss in spans.items() for t0, _ in ss)
    gaps = [
        (t1 - t0) / NS_PER_S
        for (t0, l0), (t1, l1) in zip(entries, entries[1:])
        if l0 != l1
    ]
    return min(gaps) if gaps else None


def analyze(
    message_trace,
    position_trace,
    req: UseCaseRequirement,
    merge_zone: GeoRectangle,
    *,
    context: TraceContext | None = None,
) -> KpiReport:
    """Score one run.

    Each trace may be a CSV path, a frame from :func:`read_messages` /
    :func:`read_positions`, or a sequence of :class:`MessageRow` /
    :class:`PositionRow`.
    """
    msgs = _sort_messages(_messages(message_trace))
    positions = _sort_positions(_positions(position_trace))
    ctx = context or TraceContext()
    rep = KpiReport(requirement=req.name)

    if msgs.empty:
        rep.warnings.append("empty message trace: message verdict is vacuous")

    sends = msgs.loc[msgs["event"] == "send"]
    lat = latencies(msgs)
    rep.messages_sent = len(sends)
    rep.delivered = len(lat)
    in_flight = ctx.in_flight(sends["time_ns"])
    unsettled = sends.loc[in_flight, "msg_id"]
    drops = msgs.loc[msgs["event"] == "drop", "msg_id"]
    rep.dropped = int((~drops.isin(unsettled)).sum())
    rep.in_flight_at_end = len(unsettled)
    rep.stop_commands = int((sends["msg_type"] == "Stop").sum())
    rep.drive_commands = int((sends["msg_type"] == "Drive").sum())

    if ctx.range_m is not None and len(sends):
        per_send = expected_receptions(sends.loc[~in_flight], positions, ctx.range_m)
        rep.expected = sum(per_send.values())
        if rep.expected != rep.delivered + rep.dropped:
            rep.warnings.append(
                f"reconstructed in-range receptions ({rep.expected}) differ from "
                f"delivered + dropped ({rep.delivered + rep.dropped})"
            )
    else:
        rep.expected = rep.delivered + rep.dropped
        if len(sends):
            rep.warnings.append("radio range unknown: expected receptions taken as delivered + dropped")
    rep.reliability_pct = 100.0 * rep.delivered / rep.expected if rep.expected else 100.0

    if len(lat):
        ms = lat["latency_ns"].to_numpy(np.int64) / 1e6
        rep.latency_p50_ms = float(np.percentile(ms, 50))
        rep.latency_p95_ms = float(np.percentile(ms, 95))
        rep.latency_max_ms = float(ms.max())

    vehicles = _vehicles(positions)
    if len(vehicles):
        rep.max_speed_kmh = float(vehicles["speed_mps"].max()) * KMH_PER_MPS
        live = vehicles.loc[vehicles["state"] != "despawned"].groupby("time_ns")["speed_mps"]
        spread = (live.max() - live.min()).max()
        rep.max_relative_speed_kmh = (0.0 if pd.isna(spread) else float(spread)) * KMH_PER_MPS

    if ctx.route_labels:
        pairs = vehicles[["entity", "route_id"]].drop_duplicates()
        labels = {e: ctx.route_labels.get(r, "?") for e, r in zip(pairs["entity"], pairs["route_id"])}
        spans = _zone_intervals(positions, merge_zone)
        episodes = _co_occupancy(spans, labels)
        _classify(episodes, spans, msgs, positions, ctx)
        rep.conflicts = episodes
        rep.zone_conflicts = len(episodes)
        rep.guarded_conflicts = sum(e.classification == "guarded" for e in episodes)
        rep.late_conflicts = sum(e.classification == "late" for e in episodes)
        rep.unguarded_conflicts = sum(e.classification == "unguarded" for e in episodes)
        rep.co_occupancy_s = sum(e.end_ns - e.start_ns for e in episodes) / NS_PER_S
        rep.min_merge_headway_s = _merge_headway(spans, labels)
    elif len(vehicles):
        rep.warnings.append("route labels unknown: merge-zone metrics skipped")

    rep.latency_pass = rep.latency_p95_ms <= req.max_latency_ms
    rep.reliability_pass = rep.reliability_pct >= req.min_reliability_pct
    rep.verdict = "pass" if rep.latency_pass and rep.reliability_pass else "fail"
    return rep


# --- liveness -----------------------------------------------------------------


@dataclass(frozen=True)
class ReleaseRecord:
    vehicle: str
    stop_recv_ns: int
    drive_recv_ns: int | None
    queue_empty_ns: int | None

    @property
    def delay_ns(self) -> int | None:
        """Drive arrival after the last relevant B beacon expired (<= 0 if earlier)."""
        if self.drive_recv_ns is None or self.queue_empty_ns is None:
            return None
        return self.drive_recv_ns - self.queue_empty_ns


def release_records(
    message_trace, route_of: Mapping[str, str], labels: Mapping[str, str], ttl_ns: int
) -> list[ReleaseRecord]:
    """Pair every Stop an A vehicle received with the Drive that released it.

    ``queue_empty_ns`` is the expiry of the last B beacon the RSU received
    before it sent that Drive.
    """
    msgs = _sort_messages(_messages(message_trace))
    label_of = {e: labels.get(r, "") for e, r in route_of.items()}
    beacons = msgs.loc[
        (msgs["event"] == "recv") & (msgs["msg_type"] == "Beacon") & msgs["to"].str.startswith(RSU_PREFIX)
    ]
    b_beacons = [t for t, s in zip(beacons["time_ns"].tolist(), beacons["sender"].tolist()) if label_of.get(s) == "B"]

    out = []
    for v, ctrl in _targeted_controls(msgs).groupby("to", sort=True):
        if label_of.get(v) != "A":
            continue
        pending: int | None = None
        for t, kind, sent in zip(ctrl["time_ns"].tolist(), ctrl["msg_type"].tolist(), ctrl["sent_ns"].tolist()):
            if kind == "Stop":
                if pending is None:
                    pending = t
            elif pending is not None:
                k = bisect_right(b_beacons, sent) - 1
                empty = b_beacons[k] + ttl_ns if k >= 0 else None
                out.append(ReleaseRecord(v, pending, t, empty))
                pending = None
        if pending is not None:
            out.append(ReleaseRecord(v, pending, None, None))
    return out


# --- output ---------------------------------------------------------------------


def render_text(rep: KpiReport, req: UseCaseRequirement) -> str:
    hw = "n/a" if rep.min_merge_headway_s is None else f"{rep.min_merge_headway_s:.3f} s"
    lines = [
        f"KPI report against '{req.name}' "
        f"(latency verdict uses p95 <= {req.max_latency_ms:g} ms; reliability >= {req.min_reliability_pct:g}%)",
        f"messages sent        {rep.messages_sent}",
        f"receptions expected  {rep.expected} ({rep.in_flight_at_end} sends still in flight at end)",
        f"delivered / dropped  {rep.delivered} / {rep.dropped}",
        f"reliability          {rep.reliability_pct:.3f} %  [{'pass' if rep.reliability_pass else 'fail'}]",
        f"latency p50/p95/max  {rep.latency_p50_ms:.4f} / {rep.latency_p95_ms:.4f} / {rep.latency_max_ms:.4f} ms"
        f"  [{'pass' if rep.latency_pass else 'fail'}]",
        f"zone conflicts       {rep.zone_conflicts} (guarded {rep.guarded_conflicts}, late {rep.late_conflicts}, "
        f"unguarded {rep.unguarded_conflicts}; {rep.co_occupancy_s:.1f} s co-occupied)",
        f"min merge headway    {hw}",
        f"stop / drive         {rep.stop_commands} / {rep.drive_commands}",
        f"max speed            {rep.max_speed_kmh:.1f} km/h (table: {req.max_speed_kmh:g}, informational)",
        f"max relative speed   {rep.max_relative_speed_kmh:.1f} km/h (table: {req.max_relative_speed_kmh:g}, informational)",
        f"verdict              {rep.verdict.upper()}",
    ]
    lines += [f"warning: {w}" for w in rep.warnings]
    return "\n".join(lines) + "\n"


def write_latency_csv(message_trace, path: Path) -> Path:
    lat = latencies(_sort_messages(_messages(message_trace)))
    table = pd.DataFrame({
        "msg_id": lat["msg_id"],
        "msg_type": lat["msg_type"],
        "from": lat["sender"],
        "to": lat["to"],
        "recv_ns": lat["time_ns"],
        "latency_ms": lat["latency_ns"] / 1e6,
    })
    table.to_csv(path, index=False, lineterminator="\n")
    return path


def write_occupancy_csv(position_trace, zone: GeoRectangle, route_labels: Mapping[str, str], path: Path) -> Path:
    """Peak number of A and B vehicles inside the zone in each whole second."""
    rows = _vehicles(_positions(position_trace))
    label = rows["route_id"].map(route_labels)
    inside = _in_zone(rows, zone)
    counts = pd.DataFrame({
        "time_ns": rows["time_ns"].to_numpy(np.int64),
        "a": inside & (label == "A").to_numpy(),
        "b": inside & (label == "B").to_numpy(),
    }).groupby("time_ns")[["a", "b"]].sum()
    peak = counts.groupby(counts.index // NS_PER_S).max()
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("second,a_in_zone,b_in_zone\n")
        for sec, a, b in zip(peak.index.tolist(), peak["a"].tolist(), peak["b"].tolist()):
            fh.write(f"{sec},{a},{b}\n")
    return path


def write_report(
    rep: KpiReport,
    req: UseCaseRequirement,
    out_dir: Path,
    msgs=None,
    positions=None,
    zone: GeoRectangle | None = None,
    route_labels: Mapping[str, str] | None = None,
) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"text": out_dir / "kpi_report.txt", "json": out_dir / "kpi_report.json"}
    paths["text"].write_text(render_text(rep, req), encoding="utf-8")
    doc = {"requirement": asdict(req), "latency_statistic": "p95", "report": rep.as_dict()}
    paths["json"].write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if msgs is not None:
        paths["latency"] = write_latency_csv(msgs, out_dir / "latency.csv")
    if positions is not None and zone is not None and route_labels:
        paths["occupancy"] = write_occupancy_csv(positions, zone, route_labels, out_dir / "zone_occupancy.csv")
    return paths
