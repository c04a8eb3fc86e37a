"""Domain types, calendar helpers and polygon geometry.

Coordinates are WGS84 lon/lat degrees throughout.  Polygons are stored as
tuples of closed rings; containment uses the even-odd rule over all rings
(so holes and multi-part zones work) and treats boundary points as inside.
"""

from __future__ import annotations

import datetime as dt
import enum
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0088
MINUTES_PER_DAY = 1440


class GeometryError(ValueError):
    """Malformed or overlapping zone geometry."""

    def __init__(self, zone_id, msg):
        super().__init__(f"zone {zone_id}: {msg}")
        self.zone_id = zone_id


class DayClass(str, enum.Enum):
    BUSINESS_DAY = "business_day"
    SATURDAY = "saturday"
    SUNDAY = "sunday"


class LandUse(str, enum.Enum):
    RESIDENTIAL = "residential"
    BUSINESS_ONLY = "business_only"
    MIXED_ACTIVITIES = "mixed_activities"


DAY_GROUPS = ("business", "weekend")


def classify_day(date):
    """Monday-Friday are business days; weekends map to their own class."""
    wd = date.weekday()
    if wd == 5:
        return DayClass.SATURDAY
    if wd == 6:
        return DayClass.SUNDAY
    return DayClass.BUSINESS_DAY


def day_group(day_class):
    return "business" if DayClass(day_class) is DayClass.BUSINESS_DAY else "weekend"


def format_minute(minute):
    return f"{minute // 60}:{minute % 60:02d}"


def parse_minute(text):
    h, m = text.strip().split(":")
    minute = int(h) * 60 + int(m)
    if not 0 <= minute < MINUTES_PER_DAY:
        raise ValueError(f"minute of day out of range: {text!r}")
    return minute


@dataclass(frozen=True)
class NetworkEvent:
    """One device observation at one tower, at minute resolution."""

    date: dt.date
    minute: int
    device_id: str
    tower_id: str
    kib_downloaded: float
    device_category: str = ""

    def __post_init__(self):
        if not 0 <= self.minute < MINUTES_PER_DAY:
            raise ValueError(f"minute of day out of range: {self.minute}")
        if not self.kib_downloaded >= 0:
            raise ValueError("kib_downloaded must be non-negative")
        if not self.device_id or not self.tower_id:
            raise ValueError("device_id and tower_id must be non-empty")


@dataclass(frozen=True)
class Tower:
    tower_id: str
    lon: float
    lat: float

    def __post_init__(self):
        if not self.tower_id:
            raise ValueError("tower_id must be non-empty")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"tower {self.tower_id}: coordinates out of range")


@dataclass(frozen=True)
class ZoneRecord:
    """A survey zone.  ``polygon`` is a tuple of closed rings of (lon, lat)."""

    zone_id: str
    polygon: tuple
    land_use: LandUse
    area_km2: float
    pokepoint_count: int = 0
    geometry: dict | None = field(default=None, compare=False, hash=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "land_use", LandUse(self.land_use))
        rings = tuple(tuple((float(x), float(y)) for x, y in ring) for ring in self.polygon)
        object.__setattr__(self, "polygon", rings)
        if not self.area_km2 > 0:
            raise GeometryError(self.zone_id, "area_km2 must be positive")
        if self.pokepoint_count < 0:
            raise ValueError("pokepoint_count must be non-negative")

    @property
    def density(self):
        """PokéPoints per square kilometre."""
        return self.pokepoint_count / self.area_km2

    def bbox(self):
        xs = [x for ring in self.polygon for x, _ in ring]
        ys = [y for ring in self.polygon for _, y in ring]
        return min(xs), min(ys), max(xs), max(ys)

    def validate(self):
        validate_polygon(self.zone_id, self.polygon)

    def geodesic_area_km2(self):
        return polygon_area_km2(self.polygon)


@dataclass(frozen=True)
class TimeGrid:
    """Inclusive minute-of-day range.  The default is 06:00-23:59."""

    start_minute: int = 360
    end_minute: int = 1439
    step: int = 1

    def __post_init__(self):
        if not 0 <= self.start_minute < self.end_minute < MINUTES_PER_DAY:
            raise ValueError("grid needs 0 <= start < end <= 1439")
        if self.step < 1:
            raise ValueError("step must be >= 1")

    @property
    def minutes(self):
        return np.arange(self.start_minute, self.end_minute + 1, self.step)

    def __len__(self):
        return (self.end_minute - self.start_minute) // self.step + 1

    def __contains__(self, minute):
        return (self.start_minute <= minute <= self.end_minute
                and (minute - self.start_minute) % self.step == 0)

    def index(self, minute):
        return (np.asarray(minute) - self.start_minute) // self.step

    def mask(self, minutes):
        m = np.asarray(minutes)
        return ((m >= self.start_minute) & (m <= self.end_minute)
                & ((m - self.start_minute) % self.step == 0))


@dataclass(frozen=True)
class StudyCalendar:
    pre_dates: tuple
    post_dates: tuple
    excluded_dates: tuple = ()
    day_class: dict = field(default_factory=dict)

    def __post_init__(self):
        pre = tuple(sorted(self.pre_dates))
        post = tuple(sorted(self.post_dates))
        excl = tuple(sorted(self.excluded_dates))
        if set(pre) & set(post):
            raise ValueError("pre and post dates overlap")
        if set(excl) & (set(pre) | set(post)):
            raise ValueError("excluded dates must not be study dates")
        classes = {d: classify_day(d) for d in pre + post + excl}
        classes.update({d: DayClass(c) for d, c in dict(self.day_class).items()})
        object.__setattr__(self, "pre_dates", pre)
        object.__setattr__(self, "post_dates", post)
        object.__setattr__(self, "excluded_dates", excl)
        object.__setattr__(self, "day_class", classes)

    @property
    def study_dates(self):
        return tuple(sorted(self.pre_dates + self.post_dates))

    def is_post(self, date):
        return date in set(self.post_dates)

    def group_of(self, date):
        return day_group(self.day_class[date])

    def dates_in_group(self, group):
        if group in (None, "all"):
            return self.study_dates
        return tuple(d for d in self.study_dates if self.group_of(d) == group)

    @classmethod
    def around_launch(cls, launch, days=7):
        """``days`` dates either side of ``launch``, the launch day excluded."""
        pre = tuple(launch - dt.timedelta(days=k) for k in range(days, 0, -1))
        post = tuple(launch + dt.timedelta(days=k) for k in range(1, days + 1))
        return cls(pre, post, (launch,))


# ---------------------------------------------------------------------------
# geometry

def _ring_arrays(ring):
    a = np.asarray(ring, dtype=float)
    return a[:-1, 0], a[:-1, 1], a[1:, 0], a[1:, 1]


def _on_segment(px, py, x1, y1, x2, y2, eps=1e-12):
    """Boolean matrix (points x segments): point lies on segment."""
    px = px[:, None]
    py = py[:, None]
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    scale = np.maximum(np.abs(x2 - x1) + np.abs(y2 - y1), 1e-300)
    on_line = np.abs(cross) <= eps * scale
    within = ((px >= np.minimum(x1, x2) - eps) & (px <= np.maximum(x1, x2) + eps)
              & (py >= np.minimum(y1, y2) - eps) & (py <= np.maximum(y1, y2) + eps))
    return on_line & within


def polygon_contains(polygon, lon, lat, include_boundary=True):
    """Vectorised even-odd containment of points in a ring set.

    Returns a boolean array; boundary points count as inside when
    ``include_boundary`` is set.
    """
    px = np.atleast_1d(np.asarray(lon, dtype=float))
    py = np.atleast_1d(np.asarray(lat, dtype=float))
    inside = np.zeros(px.shape, dtype=bool)
    boundary = np.zeros(px.shape, dtype=bool)
    for ring in polygon:
        x1, y1, x2, y2 = _ring_arrays(ring)
        pyc = py[:, None]
        crosses = (y1 > pyc) != (y2 > pyc)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (pyc - y1) * (x2 - x1) / (y2 - y1)
        hits = crosses & (px[:, None] < xint)
        inside ^= (np.count_nonzero(hits, axis=1) % 2).astype(bool)
        boundary |= _on_segment(px, py, x1, y1, x2, y2).any(axis=1)
    if include_boundary:
        return inside | boundary
    return inside & ~boundary


def _segments_intersect(p1, p2, p3, p4):
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on(p1, p2, p3)) or (o2 == 0 and on(p1, p2, p4))
            or (o3 == 0 and on(p3, p4, p1)) or (o4 == 0 and on(p3, p4, p2)))


def validate_polygon(zone_id, polygon):
    """Raise :class:`GeometryError` for open, degenerate or self-crossing rings."""
    if not polygon:
        raise GeometryError(zone_id, "polygon has no rings")
    for ring in polygon:
        if len(ring) < 4:
            raise GeometryError(zone_id, "ring needs at least 4 vertices (closed)")
        if tuple(ring[0]) != tuple(ring[-1]):
            raise GeometryError(zone_id, "ring is not closed")
        pts = np.asarray(ring, dtype=float)
        if not np.all(np.isfinite(pts)):
            raise GeometryError(zone_id, "non-finite coordinate")
        if np.any(np.abs(pts[:, 0]) > 180) or np.any(np.abs(pts[:, 1]) > 90):
            raise GeometryError(zone_id, "coordinate outside lon/lat range")
        n = len(ring) - 1
        if len({tuple(p) for p in ring[:-1]}) < 3:
            raise GeometryError(zone_id, "ring is degenerate")
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]):
                    raise GeometryError(zone_id, "ring self-intersects")


def ring_area_km2(ring):
    """Spherical-excess approximation of a ring's area (unsigned)."""
    pts = np.radians(np.asarray(ring, dtype=float))
    lon, lat = pts[:, 0], pts[:, 1]
    s = np.sum((lon[1:] - lon[:-1]) * (2.0 + np.sin(lat[:-1]) + np.sin(lat[1:])))
    return abs(s) * EARTH_RADIUS_KM**2 / 2.0


def polygon_area_km2(polygon):
    """Total area of a ring set; rings nested inside an odd number of other
    rings count as holes."""
    rings = list(polygon)
    total = 0.0
    for i, ring in enumerate(rings):
        depth = 0
        x, y = ring[0]
        for j, other in enumerate(rings):
            if i != j and polygon_contains((other,), x, y, include_boundary=False)[0]:
                depth += 1
        total += -ring_area_km2(ring) if depth % 2 else ring_area_km2(ring)
    return total


def point_in_zone(lon, lat, zones):
    """Id of the first zone (input order) containing the point, else None."""
    for z in zones:
        x0, y0, x1, y1 = z.bbox()
        if x0 <= lon <= x1 and y0 <= lat <= y1:
            if polygon_contains(z.polygon, lon, lat)[0]:
                return z.zone_id
    return None


def locate_points(lon, lat, zones):
    """Vectorised :func:`point_in_zone`: index into ``zones`` per point, -1 if none."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    out = np.full(lon.shape, -1, dtype=np.int64)
    for k, z in enumerate(zones):
        todo = out < 0
        if not todo.any():
            break
        x0, y0, x1, y1 = z.bbox()
        cand = todo & (lon >= x0) & (lon <= x1) & (lat >= y0) & (lat <= y1)
        idx = np.flatnonzero(cand)
        if idx.size:
            hit = polygon_contains(z.polygon, lon[idx], lat[idx])
            out[idx[hit]] = k
    return out


def check_non_overlapping(zones, samples=9):
    """Sampled-point overlap check between zones with intersecting bounding boxes.

    Points on a shared boundary are allowed; a sample strictly inside two
    zones raises :class:`GeometryError`.
    """
    boxes = [z.bbox() for z in zones]
    for i, zi in enumerate(zones):
        ax0, ay0, ax1, ay1 = boxes[i]
        for j in range(i + 1, len(zones)):
            bx0, by0, bx1, by1 = boxes[j]
            x0, y0 = max(ax0, bx0), max(ay0, by0)
            x1, y1 = min(ax1, bx1), min(ay1, by1)
            if x0 >= x1 or y0 >= y1:
                continue
            # sample cell centres of the bbox intersection
            fx = (np.arange(samples) + 0.5) / samples
            gx, gy = np.meshgrid(x0 + fx * (x1 - x0), y0 + fx * (y1 - y0))
            gx, gy = gx.ravel(), gy.ravel()
            a = polygon_contains(zi.polygon, gx, gy, include_boundary=False)
            if not a.any():
                continue
            b = polygon_contains(zones[j].polygon, gx[a], gy[a], include_boundary=False)
            if b.any():
                raise GeometryError(zones[j].zone_id, f"overlaps zone {zi.zone_id}")


def square_ring(center_lon, center_lat, side_km):
    """Closed ring for a square of ``side_km`` centred on a lon/lat point."""
    km_per_deg = EARTH_RADIUS_KM * math.pi / 180.0
    dlat = side_km / km_per_deg / 2.0
    dlon = side_km / (km_per_deg * math.cos(math.radians(center_lat))) / 2.0
    return ((center_lon - dlon, center_lat - dlat), (center_lon + dlon, center_lat - dlat),
            (center_lon + dlon, center_lat + dlat), (center_lon - dlon, center_lat + dlat),
            (center_lon - dlon, center_lat - dlat))
