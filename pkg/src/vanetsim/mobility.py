"""Mobility inputs: trace parsing, synthetic grid traffic, and RSU placement.

Produces the time-ordered stream of :class:`NetworkSnapshot` objects that every
other module consumes.  Snapshots come either from externally generated
floating-car-data traces (SUMO-style FCD XML, or the flat CSV format documented
in the README) or from the built-in synthetic generator that moves vehicles on
a parametric grid road network.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# CSV serialization precision: positions to 3 decimals, speed/heading to 2.
_POS_DECIMALS = 3
_SPEED_DECIMALS = 2

CSV_HEADER = "time,id,x,y,speed,heading_rad"


class TraceError(ValueError):
    """Malformed trace input (bad document, bad field, or bad ordering)."""


class ConfigError(ValueError):
    """Invalid mobility or placement configuration."""


class PlacementError(ValueError):
    """RSU placement request that cannot be satisfied."""


def normalize_heading(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    theta = math.fmod(theta, TWO_PI)
    if theta < 0.0:
        theta += TWO_PI
    # fmod of values just below 2*pi can round back up to 2*pi exactly
    return 0.0 if theta >= TWO_PI else theta


@dataclass(frozen=True)
class VehicleState:
    """One vehicle at one instant: planar position, speed, heading.

    Heading is radians counterclockwise from east, normalized to [0, 2*pi).
    """

    id: str
    pos_x: float
    pos_y: float
    speed: float
    heading: float

    def __post_init__(self) -> None:
        if self.speed < 0.0:
            raise ValueError(f"vehicle {self.id}: negative speed {self.speed}")
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    def velocity(self) -> tuple[float, float]:
        return (self.speed * math.cos(self.heading), self.speed * math.sin(self.heading))


@dataclass(frozen=True)
class RsuNode:
    """Fixed roadside unit with a bandwidth budget (Mbps) for vehicle links."""

    id: str
    pos_x: float
    pos_y: float
    bandwidth_capacity: float

    def __post_init__(self) -> None:
        if self.bandwidth_capacity <= 0.0:
            raise ValueError(f"rsu {self.id}: bandwidth capacity must be > 0")


@dataclass(frozen=True)
class NetworkSnapshot:
    """All node states at one simulation step.

    ``vehicles`` is always sorted by id, ids unique.  The RSU tuple is the
    same object for every snapshot of a run (fixed infrastructure).
    """

    step: int
    step_duration_s: float
    vehicles: tuple[VehicleState, ...]
    rsus: tuple[RsuNode, ...]

    def __post_init__(self) -> None:
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError(f"snapshot step {self.step}: duplicate vehicle ids")
        if ids != sorted(ids):
            object.__setattr__(
                self, "vehicles", tuple(sorted(self.vehicles, key=lambda v: v.id))
            )

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    def vehicle_by_id(self) -> dict[str, VehicleState]:
        return {v.id: v for v in self.vehicles}


# ---------------------------------------------------------------------------
# Trace parsing
# ---------------------------------------------------------------------------


def heading_from_sumo_angle(angle_deg: float) -> float:
    """Convert a SUMO angle (degrees clockwise from north) to scene heading."""
    return normalize_heading(math.radians(90.0 - angle_deg))


def _require_attr(elem: ET.Element, name: str, context: str) -> str:
    value = elem.get(name)
    if value is None:
        raise TraceError(f"{context}: missing required field '{name}'")
    return value


def _parse_float(text: str, name: str, context: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise TraceError(f"{context}: field '{name}' is not a number: {text!r}") from exc


def parse_fcd_xml(
    source: IO[bytes] | str,
    rsus: Sequence[RsuNode] = (),
    geo: bool = False,
) -> list[NetworkSnapshot]:
    """Parse a floating-car-data XML export into snapshots.

    Expected structure: ``<timestep time="...">`` elements containing
    ``<vehicle id x y speed angle>`` children, angle in degrees clockwise
    from north.  With ``geo=True`` the x/y attributes are treated as
    lon/lat degrees and projected onto a local tangent plane anchored at
    the centroid of all points.
    """
    try:
        records = _collect_fcd_records(source)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else "?"
        raise TraceError(f"line {line}: malformed XML: {exc}") from exc
    if geo:
        records = _project_geo(records)
    return _records_to_snapshots(records, rsus)


def _collect_fcd_records(source: IO[bytes] | str) -> list[tuple[float, str, float, float, float, float]]:
    records = []
    last_time: Optional[float] = None
    for event, elem in ET.iterparse(source, events=("end",)):
        if elem.tag == "vehicle":
            continue  # handled with the enclosing timestep
        if elem.tag != "timestep":
            continue
        t = _parse_float(_require_attr(elem, "time", "timestep"), "time", "timestep")
        if last_time is not None and t <= last_time:
            raise TraceError(
                f"timestep ordering error: time {t} follows {last_time} (must increase)"
            )
        last_time = t
        for veh in elem.iter("vehicle"):
            ctx = f"timestep {t}"
            vid = _require_attr(veh, "id", ctx)
            ctx = f"timestep {t}, vehicle {vid}"
            x = _parse_float(_require_attr(veh, "x", ctx), "x", ctx)
            y = _parse_float(_require_attr(veh, "y", ctx), "y", ctx)
            speed = _parse_float(_require_attr(veh, "speed", ctx), "speed", ctx)
            angle = _parse_float(_require_attr(veh, "angle", ctx), "angle", ctx)
            records.append((t, vid, x, y, speed, heading_from_sumo_angle(angle)))
        elem.clear()
    return records


_EARTH_RADIUS_M = 6371000.0


def _project_geo(records):
    """Local tangent-plane projection (equirectangular) anchored at the centroid."""
    if not records:
        return records
    lon0 = sum(r[2] for r in records) / len(records)
    lat0 = sum(r[3] for r in records) / len(records)
    cos_lat0 = math.cos(math.radians(lat0))
    out = []
    for t, vid, lon, lat, speed, heading in records:
        x = _EARTH_RADIUS_M * math.radians(lon - lon0) * cos_lat0
        y = _EARTH_RADIUS_M * math.radians(lat - lat0)
        out.append((t, vid, x, y, speed, heading))
    return out


def parse_csv_trace(source: IO[str] | Iterable[str], rsus: Sequence[RsuNode] = ()) -> list[NetworkSnapshot]:
    """Parse the flat CSV trace format (header ``time,id,x,y,speed,heading_rad``)."""
    lines = iter(source)
    try:
        header = next(lines).strip()
    except StopIteration:
        raise TraceError("line 1: empty document (missing header)") from None
    if header != CSV_HEADER:
        raise TraceError(f"line 1: bad header {header!r}, expected {CSV_HEADER!r}")

    records = []
    last_time: Optional[float] = None
    for lineno, raw in enumerate(lines, start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise TraceError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        ctx = f"line {lineno}"
        t = _parse_float(parts[0], "time", ctx)
        vid = parts[1]
        if not vid:
            raise TraceError(f"{ctx}: missing required field 'id'")
        x = _parse_float(parts[2], "x", ctx)
        y = _parse_float(parts[3], "y", ctx)
        speed = _parse_float(parts[4], "speed", ctx)
        heading = _parse_float(parts[5], "heading_rad", ctx)
        if last_time is not None and t < last_time:
            raise TraceError(
                f"{ctx}: timestep ordering error: time {t} follows {last_time}"
            )
        last_time = t
        records.append((t, vid, x, y, speed, heading))
    return _records_to_snapshots(records, rsus)


def _records_to_snapshots(records, rsus: Sequence[RsuNode]) -> list[NetworkSnapshot]:
    rsu_tuple = tuple(rsus)
    if not records:
        return []
    times: list[float] = []
    for t, *_ in records:
        if not times or t > times[-1]:
            times.append(t)
    step_duration = times[1] - times[0] if len(times) > 1 else 1.0
    step_of = {t: i for i, t in enumerate(times)}

    grouped: dict[int, list[VehicleState]] = {i: [] for i in range(len(times))}
    seen: dict[int, set[str]] = {i: set() for i in range(len(times))}
    for t, vid, x, y, speed, heading in records:
        step = step_of[t]
        if vid in seen[step]:
            raise TraceError(f"timestep {t}: duplicate vehicle id {vid!r}")
        seen[step].add(vid)
        grouped[step].append(VehicleState(vid, x, y, speed, heading))

    return [
        NetworkSnapshot(
            step=i,
            step_duration_s=step_duration,
            vehicles=tuple(sorted(grouped[i], key=lambda v: v.id)),
            rsus=rsu_tuple,
        )
        for i in range(len(times))
    ]


def write_csv_trace(snapshots: Iterable[NetworkSnapshot], sink: IO[str]) -> None:
    """Serialize snapshots to the CSV trace format (LF endings, fixed precision)."""
    sink.write(CSV_HEADER + "\n")
    for snap in snapshots:
        t = snap.step * snap.step_duration_s
        for v in snap.vehicles:
            sink.write(
                f"{t:.2f},{v.id},{v.pos_x:.{_POS_DECIMALS}f},{v.pos_y:.{_POS_DECIMALS}f},"
                f"{v.speed:.{_SPEED_DECIMALS}f},{v.heading:.{_SPEED_DECIMALS}f}\n"
            )


# ---------------------------------------------------------------------------
# Synthetic grid mobility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticMobilityConfig:
    """Parametric grid scenario: intersections on a rows x cols lattice.

    Vehicles enter at boundary road ends, drive along road segments with
    bounded acceleration, turn at intersections with the configured
    probabilities, and leave the scene when they drive off a boundary.
    ``target_start``/``target_end`` set a linear ramp for the desired
    vehicle count; spawning is Poisson with mean ``spawn_rate`` per step,
    gated so the population tracks the ramp.
    """

    grid_rows: int = 4
    grid_cols: int = 4
    spacing_m: float = 500.0
    speed_limit_mps: float = 14.0
    accel_max_mps2: float = 2.0
    spawn_rate: float = 2.0
    target_start: float = 60.0
    target_end: float = 60.0
    turn_straight: float = 0.6
    turn_left: float = 0.2
    turn_right: float = 0.2
    # optional rush-hour concentration: with probability lerp(attract_start,
    # attract_end), a turning vehicle steers toward the attractor (the grid
    # center by default) instead of rolling the turn dice; "column" mode
    # attracts toward a vertical corridor, "point" toward one cell
    attract_start: float = 0.0
    attract_end: float = 0.0
    attract_delay_steps: int = 0
    attract_cycles: int = 0         # >0: pull pulses in waves under the ramp envelope
    attract_mode: str = "column"
    attract_fraction: float = 1.0   # share of vehicles that respond to the pull
    attract_col: int = -1
    attract_row: int = -1
    # trip completion: after the delay, non-commuters may pull over and park
    # where they are (probability per step); parked vehicles stay in scene
    park_rate: float = 0.0
    park_delay_steps: int = 0
    step_duration_s: float = 1.0
    steps: int = 500

    def __post_init__(self) -> None:
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise ConfigError("grid must be at least 2x2 (zero-area grid)")
        if self.spacing_m <= 0.0:
            raise ConfigError("spacing_m must be > 0")
        if self.step_duration_s <= 0.0:
            raise ConfigError("step_duration_s must be > 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.speed_limit_mps <= 0.0:
            raise ConfigError("speed_limit_mps must be > 0")
        if min(self.turn_straight, self.turn_left, self.turn_right) < 0.0:
            raise ConfigError("turn probabilities must be >= 0")
        if self.turn_straight + self.turn_left + self.turn_right <= 0.0:
            raise ConfigError("turn probabilities must not all be zero")
        if self.spawn_rate < 0.0:
            raise ConfigError("spawn_rate must be >= 0")
        if not 0.0 <= self.attract_start <= 1.0 or not 0.0 <= self.attract_end <= 1.0:
            raise ConfigError("attraction weights must lie in [0, 1]")
        if self.attract_mode not in ("column", "point", "cross"):
            raise ConfigError("attract_mode must be 'column', 'point', or 'cross'")
        if not 0.0 <= self.attract_fraction <= 1.0:
            raise ConfigError("attract_fraction must lie in [0, 1]")
        if not 0.0 <= self.park_rate <= 1.0:
            raise ConfigError("park_rate must lie in [0, 1]")

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.grid_cols - 1) * self.spacing_m, (self.grid_rows - 1) * self.spacing_m)


# Direction encoding: index into (dx, dy) unit steps on the lattice.
_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # E, N, W, S
_HEADINGS = (0.0, math.pi / 2.0, math.pi, 3.0 * math.pi / 2.0)


@dataclass
class _Traveler:
    vid: str
    col: int          # lattice cell the vehicle is leaving
    row: int
    direction: int    # index into _DIRS
    offset: float     # meters traveled along the current segment
    speed: float
    pref_speed: float
    commuter: bool = True   # responds to the rush-hour pull
    parked: bool = False


def _entry_points(cfg: SyntheticMobilityConfig) -> list[tuple[int, int, int]]:
    """Boundary (col, row, direction) triples where vehicles may enter."""
    entries = []
    for row in range(cfg.grid_rows):
        entries.append((0, row, 0))                    # west edge heading east
        entries.append((cfg.grid_cols - 1, row, 2))    # east edge heading west
    for col in range(cfg.grid_cols):
        entries.append((col, 0, 1))                    # south edge heading north
        entries.append((col, cfg.grid_rows - 1, 3))    # north edge heading south
    return entries


def _in_grid(cfg: SyntheticMobilityConfig, col: int, row: int) -> bool:
    return 0 <= col < cfg.grid_cols and 0 <= row < cfg.grid_rows


def _toward(cfg: SyntheticMobilityConfig, tr: "_Traveler", col: int, row: int) -> int:
    """Direction whose next intersection is closest to the attractor (no
    U-turn); column mode measures column distance only.  Prefers the
    current heading on ties."""
    best_dir = tr.direction
    best_d = math.inf
    for d in (tr.direction, (tr.direction + 1) % 4, (tr.direction - 1) % 4):
        dx, dy = _DIRS[d]
        nc, nr = tr.col + dx, tr.row + dy
        if not _in_grid(cfg, nc, nr):
            continue
        if cfg.attract_mode == "column":
            dist = abs(nc - col)
        elif cfg.attract_mode == "cross":
            dist = min(abs(nc - col), abs(nr - row))
        else:
            dist = abs(nc - col) + abs(nr - row)
        if dist < best_d:
            best_d = dist
            best_dir = d
    return best_dir


def generate_synthetic(cfg: SyntheticMobilityConfig, seed: int) -> list[NetworkSnapshot]:
    """Generate a deterministic snapshot sequence for (cfg, seed)."""
    rng = np.random.default_rng(seed)
    entries = _entry_points(cfg)
    turn_w = np.array([cfg.turn_straight, cfg.turn_left, cfg.turn_right], dtype=float)
    turn_w = turn_w / turn_w.sum()
    attract_col = cfg.attract_col if cfg.attract_col >= 0 else (cfg.grid_cols - 1) // 2
    attract_row = cfg.attract_row if cfg.attract_row >= 0 else (cfg.grid_rows - 1) // 2

    travelers: list[_Traveler] = []
    next_id = 0
    snapshots: list[NetworkSnapshot] = []
    dt = cfg.step_duration_s

    # start with traffic already flowing: fill to the initial target with
    # vehicles scattered along road segments (skipped when spawning is off)
    if cfg.spawn_rate > 0.0 and cfg.steps > 0:
        for _ in range(int(round(cfg.target_start))):
            while True:
                col = int(rng.integers(cfg.grid_cols))
                row = int(rng.integers(cfg.grid_rows))
                direction = int(rng.integers(4))
                dx, dy = _DIRS[direction]
                if _in_grid(cfg, col + dx, row + dy):
                    break
            commuter = bool(rng.random() < cfg.attract_fraction)
            lo, hi = (0.85, 1.0) if commuter else (0.55, 0.95)
            pref = float(rng.uniform(lo, hi)) * cfg.speed_limit_mps
            travelers.append(
                _Traveler(
                    vid=f"v{next_id:06d}",
                    col=col,
                    row=row,
                    direction=direction,
                    offset=float(rng.uniform(0.0, cfg.spacing_m)),
                    speed=float(rng.uniform(0.6, 1.0)) * pref,
                    pref_speed=pref,
                    commuter=commuter,
                )
            )
            next_id += 1

    for step in range(cfg.steps):
        # spawn toward the linearly interpolated population target
        frac = step / (cfg.steps - 1) if cfg.steps > 1 else 0.0
        target = cfg.target_start + (cfg.target_end - cfg.target_start) * frac
        ramp_span = max(cfg.steps - 1 - cfg.attract_delay_steps, 1)
        ramp = min(max((step - cfg.attract_delay_steps) / ramp_span, 0.0), 1.0)
        attract_w = cfg.attract_start + (cfg.attract_end - cfg.attract_start) * ramp
        if cfg.attract_cycles > 0:
            attract_w *= 0.5 * (1.0 - math.cos(2.0 * math.pi * cfg.attract_cycles * ramp))
        deficit = int(round(target)) - len(travelers)
        arrivals = int(rng.poisson(cfg.spawn_rate)) if cfg.spawn_rate > 0.0 else 0
        for _ in range(min(arrivals, max(deficit, 0))):
            col, row, direction = entries[int(rng.integers(len(entries)))]
            commuter = bool(rng.random() < cfg.attract_fraction)
            lo, hi = (0.85, 1.0) if commuter else (0.55, 0.95)
            pref = float(rng.uniform(lo, hi)) * cfg.speed_limit_mps
            travelers.append(
                _Traveler(
                    vid=f"v{next_id:06d}",
                    col=col,
                    row=row,
                    direction=direction,
                    offset=0.0,
                    speed=float(rng.uniform(0.6, 1.0)) * pref,
                    pref_speed=pref,
                    commuter=commuter,
                )
            )
            next_id += 1

        # advance every vehicle; handle intersection turns and boundary exits
        survivors: list[_Traveler] = []
        for tr in travelers:
            if tr.parked:
                survivors.append(tr)
                continue
            if (
                cfg.park_rate > 0.0
                and not tr.commuter
                and step >= cfg.park_delay_steps
                and rng.random() < cfg.park_rate
            ):
                tr.parked = True
                tr.speed = 0.0
                survivors.append(tr)
                continue
            accel = (tr.pref_speed - tr.speed) * 0.5 + float(rng.normal(0.0, 0.3))
            accel = max(-cfg.accel_max_mps2, min(cfg.accel_max_mps2, accel))
            tr.speed = max(0.0, min(cfg.speed_limit_mps, tr.speed + accel * dt))
            tr.offset += tr.speed * dt
            exited = False
            while tr.offset >= cfg.spacing_m:
                tr.offset -= cfg.spacing_m
                dx, dy = _DIRS[tr.direction]
                tr.col += dx
                tr.row += dy
                # pick the next direction at the intersection just reached
                if tr.commuter and attract_w > 0.0 and rng.random() < attract_w:
                    cand = _toward(cfg, tr, attract_col, attract_row)
                else:
                    choice = int(rng.choice(3, p=turn_w))
                    cand = (tr.direction, (tr.direction + 1) % 4, (tr.direction - 1) % 4)[choice]
                options = [cand, tr.direction, (tr.direction + 1) % 4, (tr.direction - 1) % 4]
                for d in options:
                    ndx, ndy = _DIRS[d]
                    if _in_grid(cfg, tr.col + ndx, tr.row + ndy):
                        tr.direction = d
                        break
                else:
                    exited = True  # nowhere to go inside the grid: leave the scene
                    break
                ndx, ndy = _DIRS[tr.direction]
                if not _in_grid(cfg, tr.col + ndx, tr.row + ndy):
                    exited = True
                    break
            if not exited:
                survivors.append(tr)
        travelers = survivors

        vehicles = []
        for tr in travelers:
            dx, dy = _DIRS[tr.direction]
            x = tr.col * cfg.spacing_m + dx * tr.offset
            y = tr.row * cfg.spacing_m + dy * tr.offset
            vehicles.append(
                VehicleState(tr.vid, x, y, tr.speed, _HEADINGS[tr.direction])
            )
        snapshots.append(
            NetworkSnapshot(
                step=step,
                step_duration_s=dt,
                vehicles=tuple(sorted(vehicles, key=lambda v: v.id)),
                rsus=(),
            )
        )
    return snapshots


def attach_rsus(snapshots: Sequence[NetworkSnapshot], rsus: Sequence[RsuNode]) -> list[NetworkSnapshot]:
    """Return the same snapshots with the given RSU set attached to each."""
    rsu_tuple = tuple(rsus)
    return [replace(s, rsus=rsu_tuple) for s in snapshots]


# ---------------------------------------------------------------------------
# RSU placement
# ---------------------------------------------------------------------------


def place_rsus(
    bounds: tuple[float, float, float, float],
    count: int,
    strategy: str = "grid",
    manual: Optional[Sequence[tuple[float, float]]] = None,
    bandwidth_capacity: float = 100.0,
) -> tuple[RsuNode, ...]:
    """Place RSUs inside ``bounds`` = (x_min, y_min, x_max, y_max).

    ``grid`` spreads ``count`` units on a near-square lattice of cell
    centers so that neighboring coverage disks overlap; ``manual`` echoes
    the supplied coordinates (rejecting any outside the bounds).
    """
    if count < 0:
        raise ConfigError("rsu count must be >= 0")
    x_min, y_min, x_max, y_max = bounds
    if strategy == "manual":
        coords = list(manual or [])
        if len(coords) != count:
            raise ConfigError(f"manual placement: expected {count} coordinates, got {len(coords)}")
        for x, y in coords:
            if not (x_min <= x <= x_max and y_min <= y <= y_max):
                raise PlacementError(f"rsu coordinate ({x}, {y}) outside scene bounds {bounds}")
        return tuple(
            RsuNode(f"r{i:02d}", float(x), float(y), bandwidth_capacity)
            for i, (x, y) in enumerate(coords)
        )
    if strategy != "grid":
        raise ConfigError(f"unknown rsu placement strategy {strategy!r}")
    if count == 0:
        return ()
    width = x_max - x_min
    height = y_max - y_min
    gx = max(1, math.ceil(math.sqrt(count * max(width, 1.0) / max(height, 1.0))))
    gy = math.ceil(count / gx)
    coords = []
    for j in range(gy):
        for i in range(gx):
            if len(coords) >= count:
                break
            coords.append(
                (
                    x_min + width * (2 * i + 1) / (2 * gx),
                    y_min + height * (2 * j + 1) / (2 * gy),
                )
            )
    return tuple(
        RsuNode(f"r{i:02d}", x, y, bandwidth_capacity) for i, (x, y) in enumerate(coords)
    )
