"""Readers and validation for events, towers, zones, POIs and the study config."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import (
    GeometryError,
    LandUse,
    NetworkEvent,
    StudyCalendar,
    TimeGrid,
    Tower,
    ZoneRecord,
    check_non_overlapping,
    locate_points,
    parse_minute,
    validate_polygon,
)

log = logging.getLogger(__name__)

EVENT_HEADER = ["timestamp", "device_id", "tower_id", "kib", "category"]
TOWER_HEADER = ["tower_id", "lon", "lat"]
POI_HEADER = ["lon", "lat", "kind"]


class IngestError(Exception):
    """Fatal input problem (missing file, bad header, invalid geometry...)."""


@dataclass
class RejectionReport:
    """Per-reason counts of skipped event rows."""

    rows_read: int = 0
    accepted: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def total_rejected(self):
        return sum(self.rejected.values())

    def reject(self, reason):
        self.rejected[reason] += 1


def _open_csv(path, header):
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"missing file: {path}")
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    first = next(reader, None)
    if first is None or [c.strip() for c in first] != header:
        fh.close()
        raise IngestError(f"{path}: expected header {','.join(header)}")
    return fh, reader


def parse_timestamp(text):
    """``YYYY-MM-DDTHH:MM`` (seconds, if present, are truncated) -> (date, minute)."""
    text = text.strip()
    if len(text) < 16 or text[10] not in "T ":
        raise ValueError(text)
    date = dt.date.fromisoformat(text[:10])
    hh, mm = text[11:13], text[14:16]
    if text[13] != ":" or not (hh.isdigit() and mm.isdigit()):
        raise ValueError(text)
    rest = text[16:]
    if rest and not (len(rest) == 3 and rest[0] == ":" and rest[1:].isdigit()):
        raise ValueError(text)
    h, m = int(hh), int(mm)
    if h > 23 or m > 59:
        raise ValueError(text)
    return date, h * 60 + m


def _parse_event_row(row, report):
    if len(row) != 5:
        report.reject("bad_field_count")
        return None
    ts, device, tower, kib, category = (c.strip() for c in row)
    try:
        date, minute = parse_timestamp(ts)
    except ValueError:
        report.reject("bad_timestamp")
        return None
    if not device:
        report.reject("empty_device_id")
        return None
    if not tower:
        report.reject("empty_tower_id")
        return None
    try:
        kib_value = float(kib)
    except ValueError:
        report.reject("bad_kib")
        return None
    if not np.isfinite(kib_value):
        report.reject("bad_kib")
        return None
    if kib_value < 0:
        report.reject("negative_kib")
        return None
    return NetworkEvent(date, minute, device, tower, kib_value, category)


def parse_events(path):
    """Stream events from a CSV file.

    Returns ``(events, report)``: ``events`` is a generator in file order and
    ``report`` is a :class:`RejectionReport` that fills in as the generator
    is consumed.  A missing file or header raises :class:`IngestError`
    immediately; malformed rows are counted and skipped.
    """
    fh, reader = _open_csv(path, EVENT_HEADER)
    report = RejectionReport()

    def gen():
        with fh:
            for row in reader:
                if not row:
                    continue
                report.rows_read += 1
                ev = _parse_event_row(row, report)
                if ev is not None:
                    report.accepted += 1
                    yield ev

    return gen(), report


class Vocabulary:
    """String <-> dense integer code mapping, in first-seen order."""

    def __init__(self, items=()):
        self.codes = {}
        self.items = []
        for it in items:
            self.code(it)

    def code(self, item):
        c = self.codes.get(item)
        if c is None:
            c = self.codes[item] = len(self.items)
            self.items.append(item)
        return c

    def __len__(self):
        return len(self.items)


@dataclass
class EventBatch:
    """Columnar block of events.  ``tower`` indexes the dataset's tower list."""

    date: np.ndarray      # proleptic Gregorian ordinal
    minute: np.ndarray
    device: np.ndarray
    tower: np.ndarray
    kib: np.ndarray
    category: np.ndarray

    def __len__(self):
        return len(self.minute)

    def take(self, mask):
        return EventBatch(self.date[mask], self.minute[mask], self.device[mask],
                          self.tower[mask], self.kib[mask], self.category[mask])


def iter_event_batches(path, towers, devices, categories, report=None, batch_size=200_000):
    """Stream events as :class:`EventBatch` blocks with integer codes.

    Events at towers missing from ``towers`` are dropped and counted under
    ``unknown_tower`` in the rejection report.
    """
    events, rep = parse_events(path)
    tower_code = {t.tower_id: i for i, t in enumerate(towers)}
    cols = ([], [], [], [], [], [])

    def flush():
        b = EventBatch(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                       np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                       np.array(cols[4], dtype=float), np.array(cols[5], dtype=np.int64))
        for c in cols:
            c.clear()
        return b

    for ev in events:
        t = tower_code.get(ev.tower_id)
        if t is None:
            rep.reject("unknown_tower")
            rep.accepted -= 1
            continue
        cols[0].append(ev.date.toordinal())
        cols[1].append(ev.minute)
        cols[2].append(devices.code(ev.device_id))
        cols[3].append(t)
        cols[4].append(ev.kib_downloaded)
        cols[5].append(categories.code(ev.device_category))
        if len(cols[0]) >= batch_size:
            yield flush()
    if cols[0]:
        yield flush()
    if report is not None:
        report.rows_read = rep.rows_read
        report.accepted = rep.accepted
        report.rejected = rep.rejected


def read_towers(path):
    fh, reader = _open_csv(path, TOWER_HEADER)
    towers, seen = [], set()
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = Tower(row[0].strip(), float(row[1]), float(row[2]))
            except (ValueError, IndexError) as exc:
                raise IngestError(f"{path}:{lineno}: bad tower row ({exc})") from None
            if t.tower_id in seen:
                raise IngestError(f"{path}:{lineno}: duplicate tower_id {t.tower_id}")
            seen.add(t.tower_id)
            towers.append(t)
    return towers


def read_pois(path):
    """POIs as an (n, 2) lon/lat array.  PokéStops and gyms are not distinguished."""
    fh, reader = _open_csv(path, POI_HEADER)
    pts = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise IngestError(f"{path}:{lineno}: bad POI row") from None
    return np.array(pts, dtype=float).reshape(-1, 2)


def _rings_from_geometry(geom, zone_id):
    kind = geom.get("type")
    coords = geom.get("coordinates")
    if kind == "Polygon":
        rings = coords
    elif kind == "MultiPolygon":
        rings = [r for poly in coords for r in poly]
    else:
        raise GeometryError(zone_id, f"unsupported geometry type {kind!r}")
    return tuple(tuple((float(x), float(y)) for x, y, *_ in ring) for ring in rings)


def read_zones(path, area_tolerance=0.01):
    """Parse a zones FeatureCollection and validate its geometry.

    Polygons must be closed and simple, and zones must not overlap.  A
    stored ``area_km2`` differing from the recomputed area by more than
    ``area_tolerance`` is logged but kept, since the stored value wins.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"missing file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("type") != "FeatureCollection":
        raise IngestError(f"{path}: expected a FeatureCollection")
    zones, seen = [], set()
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        zone_id = str(props.get("zone_id", "")).strip()
        if not zone_id:
            raise IngestError(f"{path}: feature without zone_id")
        if zone_id in seen:
            raise IngestError(f"{path}: duplicate zone_id {zone_id}")
        seen.add(zone_id)
        try:
            land_use = LandUse(props.get("land_use"))
        except ValueError:
            raise IngestError(f"{path}: zone {zone_id}: bad land_use "
                              f"{props.get('land_use')!r}") from None
        rings = _rings_from_geometry(feat.get("geometry") or {}, zone_id)
        validate_polygon(zone_id, rings)
        zone = ZoneRecord(zone_id, rings, land_use, float(props.get("area_km2", 0.0)),
                          geometry=feat.get("geometry"))
        recomputed = zone.geodesic_area_km2()
        if abs(recomputed - zone.area_km2) > area_tolerance * zone.area_km2:
            log.warning("zone %s: stored area %.4f km2, geometry gives %.4f km2",
                        zone_id, zone.area_km2, recomputed)
        zones.append(zone)
    check_non_overlapping(zones)
    return zones


def attach_pokepoints(zones, pois):
    """Count POIs per zone; boundary POIs go to the first matching zone."""
    pois = np.asarray(pois, dtype=float).reshape(-1, 2)
    idx = locate_points(pois[:, 0], pois[:, 1], zones)
    counts = np.bincount(idx[idx >= 0], minlength=len(zones))
    return [replace(z, pokepoint_count=int(c)) for z, c in zip(zones, counts)]


def towers_per_zone(towers, zones):
    lon = np.array([t.lon for t in towers], dtype=float)
    lat = np.array([t.lat for t in towers], dtype=float)
    idx = locate_points(lon, lat, zones)
    return np.bincount(idx[idx >= 0], minlength=len(zones))


def select_zones(zones, towers, max_area_km2=20.0):
    """Keep zones under the area cap that hold at least one tower and one PokéPoint.

    The result is sorted by ``zone_id``.
    """
    n_towers = towers_per_zone(towers, zones)
    kept = [z for z, k in zip(zones, n_towers)
            if z.area_km2 < max_area_km2 and k >= 1 and z.pokepoint_count >= 1]
    return sorted(kept, key=lambda z: z.zone_id)


# ---------------------------------------------------------------------------
# study configuration

@dataclass(frozen=True)
class StudyConfig:
    calendar: StudyCalendar
    grid: TimeGrid = TimeGrid()
    launch_date: dt.date | None = None
    max_zone_area_km2: float = 20.0
    lowess_bandwidth_min: int = 30
    category_allowlist: tuple | None = None
    min_mib: float = 2.5
    max_mib: float = 500.0
    events: str = "events.csv"
    towers: str = "towers.csv"
    zones: str = "zones.geojson"
    pois: str = "pois.csv"
    base_dir: Path = Path(".")

    def path(self, key):
        p = Path(getattr(self, key))
        return p if p.is_absolute() else self.base_dir / p


def _parse_dates(text):
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if ".." in part:
            a, b = (dt.date.fromisoformat(s.strip()) for s in part.split(".."))
            out.extend(a + dt.timedelta(days=k) for k in range((b - a).days + 1))
        else:
            out.append(dt.date.fromisoformat(part))
    return tuple(out)


def _parse_grid_minute(text):
    text = text.strip()
    return parse_minute(text) if ":" in text else int(text)


def read_key_values(path):
    """``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"missing file: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise IngestError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def read_config(path):
    """Parse a study config file into a :class:`StudyConfig`."""
    kv = read_key_values(path)
    try:
        launch = dt.date.fromisoformat(kv["launch_date"]) if "launch_date" in kv else None
        if "pre_dates" in kv and "post_dates" in kv:
            calendar = StudyCalendar(_parse_dates(kv["pre_dates"]), _parse_dates(kv["post_dates"]),
                                     _parse_dates(kv.get("excluded_dates", "")))
        elif launch is not None:
            calendar = StudyCalendar.around_launch(launch)
        else:
            raise IngestError(f"{path}: need pre_dates/post_dates or launch_date")
        grid = TimeGrid(_parse_grid_minute(kv.get("grid_start", "06:00")),
                        _parse_grid_minute(kv.get("grid_end", "23:59")))
        allow = kv.get("category_allowlist", "").strip()
        allowlist = None if allow in ("", "*") else tuple(
            s.strip() for s in allow.split(",") if s.strip())
        cfg = StudyConfig(
            calendar=calendar,
            grid=grid,
            launch_date=launch,
            max_zone_area_km2=float(kv.get("max_zone_area_km2", 20.0)),
            lowess_bandwidth_min=int(kv.get("lowess_bandwidth_min", 30)),
            category_allowlist=allowlist,
            min_mib=float(kv.get("min_mib", 2.5)),
            max_mib=float(kv.get("max_mib", 500.0)),
            events=kv.get("events", "events.csv"),
            towers=kv.get("towers", "towers.csv"),
            zones=kv.get("zones", "zones.geojson"),
            pois=kv.get("pois", "pois.csv"),
            base_dir=Path(path).resolve().parent,
        )
    except (KeyError, ValueError) as exc:
        raise IngestError(f"{path}: bad config value ({exc})") from None
    if not cfg.calendar.study_dates:
        raise IngestError(f"{path}: empty study calendar")
    return cfg


def _fmt_dates(dates):
    return ",".join(d.isoformat() for d in dates)


def write_config(cfg, path):
    lines = []
    if cfg.launch_date is not None:
        lines.append(f"launch_date = {cfg.launch_date.isoformat()}")
    cal = cfg.calendar
    lines += [
        f"pre_dates = {_fmt_dates(cal.pre_dates)}",
        f"post_dates = {_fmt_dates(cal.post_dates)}",
        f"excluded_dates = {_fmt_dates(cal.excluded_dates)}",
        f"grid_start = {cfg.grid.start_minute // 60:02d}:{cfg.grid.start_minute % 60:02d}",
        f"grid_end = {cfg.grid.end_minute // 60:02d}:{cfg.grid.end_minute % 60:02d}",
        f"max_zone_area_km2 = {cfg.max_zone_area_km2!r}",
        f"lowess_bandwidth_min = {cfg.lowess_bandwidth_min}",
        f"category_allowlist = {','.join(cfg.category_allowlist) if cfg.category_allowlist else '*'}",
        f"min_mib = {cfg.min_mib!r}",
        f"max_mib = {cfg.max_mib!r}",
        f"events = {cfg.events}",
        f"towers = {cfg.towers}",
        f"zones = {cfg.zones}",
        f"pois = {cfg.pois}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class Dataset:
    """Validated static inputs plus a handle on the (streamed) events file."""

    config: StudyConfig
    towers: list
    zones: list                  # selected zones, sorted by zone_id
    all_zones: list
    events_path: Path

    @property
    def calendar(self):
        return self.config.calendar

    @property
    def grid(self):
        return self.config.grid


def load_dataset(cfg):
    """Read towers, zones and POIs, attach PokéPoints and select zones."""
    towers = read_towers(cfg.path("towers"))
    zones = read_zones(cfg.path("zones"))
    pois = read_pois(cfg.path("pois"))
    events_path = cfg.path("events")
    if not events_path.is_file():
        raise IngestError(f"missing file: {events_path}")
    zones = attach_pokepoints(zones, pois)
    selected = select_zones(zones, towers, cfg.max_zone_area_km2)
    if not selected:
        raise IngestError("no zones left after selection")
    return Dataset(cfg, towers, selected, zones, events_path)
