"""Synthetic event logs with known ground-truth effects.

The city is a grid of square zones.  Every device has a home zone and a work
zone and sits at the work zone between its personal leave and return times.
In each minute a present device emits an event with probability

    base_rate * activity(day class, t) * land_use_rate(zone, t)
              * noise(zone, date, block) * effect(zone, date, t) * attractiveness(zone)

where ``noise`` is a mean-one gamma variate shared by a zone for one block of
minutes on one date, and ``effect`` is the injected multiplier on post-launch
dates.  Home and work anchors are allocated deterministically in proportion
to zone area, land-use weight and ``exp(pokepoint_attraction * pokepoints)``,
so expected zone counts follow the log-linear model used by the sweep.

All randomness flows from the scenario seed through ``numpy`` PCG64
generators: one stream for the city layout, one for device anchors and one
per date.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ingest import EventBatch, StudyConfig, read_key_values, write_config
from .model import (DAY_GROUPS, EARTH_RADIUS_KM, MINUTES_PER_DAY, DayClass, LandUse,
                    StudyCalendar, TimeGrid, Tower, ZoneRecord, day_group, format_minute,
                    locate_points, parse_minute, ring_area_km2, square_ring)

LAND_USES = (LandUse.RESIDENTIAL, LandUse.BUSINESS_ONLY, LandUse.MIXED_ACTIVITIES)
CATEGORIES = ("prepaid", "contract")
CITY_CENTER = (-70.65, -33.45)
MAX_ZONE_AREA_KM2 = 18.37
AREA_MEDIAN_KM2 = 0.72
# lognormal shape giving a mean/median ratio of 1.34 / 0.72
AREA_SIGMA = math.sqrt(2.0 * math.log(1.34 / 0.72))

# Relative event-rate curves per land use: (minute, factor) control points,
# linearly interpolated.
DEFAULT_RATE_PROFILES = {
    LandUse.RESIDENTIAL: ((0, 1.0), (480, 0.95), (720, 0.95), (1080, 1.05), (1439, 1.05)),
    LandUse.BUSINESS_ONLY: ((0, 0.9), (540, 1.1), (1080, 1.1), (1260, 0.9), (1439, 0.9)),
    LandUse.MIXED_ACTIVITIES: ((0, 0.95), (600, 1.05), (1200, 1.05), (1439, 0.95)),
}
# (home weight, work weight) per land use
DEFAULT_ANCHOR_WEIGHTS = {
    LandUse.RESIDENTIAL: (1.0, 0.8),
    LandUse.BUSINESS_ONLY: (0.8, 1.2),
    LandUse.MIXED_ACTIVITIES: (0.9, 1.0),
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class EffectSpec:
    """Multiplier on post-launch event rates within ``[start_minute, end_minute]``.

    ``day_group`` is ``business``, ``weekend`` or ``all``.  With
    ``pokepoint_scaled`` the zone multiplier is
    ``1 + (multiplier - 1) * density / mean density``.
    """

    day_group: str
    start_minute: int
    end_minute: int
    multiplier: float
    pokepoint_scaled: bool = False

    def applies_to(self, group):
        return self.day_group in ("all", group)

    def text(self):
        s = (f"{self.day_group} {format_minute(self.start_minute)}-"
             f"{format_minute(self.end_minute)} {self.multiplier!r}")
        return s + (" pokepoint_scaled" if self.pokepoint_scaled else "")


def parse_effects(text):
    """``"business 11:58-12:46 1.138; weekend 21:24-22:12 1.096 pokepoint_scaled"``."""
    out = []
    for part in (p.strip() for p in text.split(";")):
        if not part:
            continue
        tokens = part.split()
        if len(tokens) not in (3, 4) or (len(tokens) == 4 and tokens[3] != "pokepoint_scaled"):
            raise ScenarioError(f"bad effect {part!r}")
        start, end = (parse_minute(s) for s in tokens[1].split("-"))
        out.append(EffectSpec(tokens[0], start, end, float(tokens[2].lstrip("x")),
                              len(tokens) == 4))
    return tuple(out)


@dataclass(frozen=True)
class SynthScenario:
    n_zones: int = 50
    towers_per_zone: tuple = (3, 3)
    devices: int = 5000
    land_use_mix: tuple = (0.5, 0.2, 0.3)
    pokepoint_density: float = 4.0
    effects: tuple = ()
    seed: int = 0
    launch_date: dt.date = dt.date(2016, 8, 3)
    days_each_side: int = 7
    base_rate: float = 0.5
    dispersion: float = 0.01
    noise_block_min: int = 20
    zone_heterogeneity: float = 0.0
    pokepoint_attraction: float = 0.005
    duplicate_rate: float = 0.1
    count_noise: float = 1.15
    rate_profiles: dict = field(default_factory=lambda: dict(DEFAULT_RATE_PROFILES))
    anchor_weights: dict = field(default_factory=lambda: dict(DEFAULT_ANCHOR_WEIGHTS))
    grid: TimeGrid = TimeGrid()
    lowess_bandwidth_min: int = 30

    def __post_init__(self):
        tpz = self.towers_per_zone
        if isinstance(tpz, int):
            tpz = (tpz, tpz)
        object.__setattr__(self, "towers_per_zone", tuple(int(v) for v in tpz))
        object.__setattr__(self, "land_use_mix", tuple(float(v) for v in self.land_use_mix))
        object.__setattr__(self, "effects", tuple(self.effects))

    def validate(self):
        if self.n_zones < 1:
            raise ScenarioError("n_zones must be >= 1")
        if self.devices < 1:
            raise ScenarioError("devices must be >= 1")
        lo, hi = self.towers_per_zone
        if not 1 <= lo <= hi:
            raise ScenarioError("towers_per_zone must be a range with 1 <= low <= high")
        mix = self.land_use_mix
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ScenarioError("land_use_mix must be 3 non-negative proportions summing to 1")
        if not self.pokepoint_density > 0:
            raise ScenarioError("pokepoint_density must be positive")
        if not 0 < self.base_rate <= 1:
            raise ScenarioError("base_rate must be in (0, 1]")
        if min(self.dispersion, self.zone_heterogeneity, self.duplicate_rate,
               self.count_noise) < 0:
            raise ScenarioError("noise and duplicate parameters must be >= 0")
        if self.days_each_side < 1 or self.noise_block_min < 1:
            raise ScenarioError("days_each_side and noise_block_min must be >= 1")
        for e in self.effects:
            if not e.multiplier > 0:
                raise ScenarioError(f"effect multiplier must be positive: {e.text()}")
            if e.day_group not in DAY_GROUPS + ("all",):
                raise ScenarioError(f"unknown day group {e.day_group!r}")
            if not (self.grid.start_minute <= e.start_minute <= e.end_minute
                    <= self.grid.end_minute):
                raise ScenarioError(f"effect window outside the grid: {e.text()}")
        return self

    @property
    def calendar(self):
        return StudyCalendar.around_launch(self.launch_date, self.days_each_side)


# ---------------------------------------------------------------------------
# scenario files

_INT_KEYS = ("n_zones", "devices", "seed", "days_each_side", "noise_block_min",
             "lowess_bandwidth_min")
_FLOAT_KEYS = ("pokepoint_density", "base_rate", "dispersion", "zone_heterogeneity",
               "pokepoint_attraction", "duplicate_rate", "count_noise")


def _parse_curve(text):
    pts = []
    for part in text.split(","):
        m, v = part.split(":")
        pts.append((int(m), float(v)))
    return tuple(pts)


def read_scenario(path):
    """Parse a ``key = value`` scenario file."""
    kv = read_key_values(path)
    kw = {}
    try:
        for k in _INT_KEYS:
            if k in kv:
                kw[k] = int(kv.pop(k))
        for k in _FLOAT_KEYS:
            if k in kv:
                kw[k] = float(kv.pop(k))
        if "towers_per_zone" in kv:
            parts = kv.pop("towers_per_zone").replace("-", ",").split(",")
            kw["towers_per_zone"] = (int(parts[0]), int(parts[-1]))
        if "land_use_mix" in kv:
            kw["land_use_mix"] = tuple(float(v) for v in kv.pop("land_use_mix").split(","))
        if "effects" in kv:
            kw["effects"] = parse_effects(kv.pop("effects"))
        if "launch_date" in kv:
            kw["launch_date"] = dt.date.fromisoformat(kv.pop("launch_date"))
        profiles = dict(DEFAULT_RATE_PROFILES)
        weights = dict(DEFAULT_ANCHOR_WEIGHTS)
        for key in list(kv):
            if key.startswith("rate_profile."):
                profiles[LandUse(key.split(".", 1)[1])] = _parse_curve(kv.pop(key))
            elif key.startswith("anchor_weights."):
                h, w = (float(v) for v in kv.pop(key).split(","))
                weights[LandUse(key.split(".", 1)[1])] = (h, w)
        kw["rate_profiles"] = profiles
        kw["anchor_weights"] = weights
    except (ValueError, IndexError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if kv:
        raise ScenarioError(f"{path}: unknown keys {', '.join(sorted(kv))}")
    return SynthScenario(**kw).validate()


def write_scenario(scenario, path):
    s = scenario
    lines = [f"{k} = {getattr(s, k)}" for k in _INT_KEYS]
    lines += [f"{k} = {getattr(s, k)!r}" for k in _FLOAT_KEYS]
    lines.append(f"towers_per_zone = {s.towers_per_zone[0]}-{s.towers_per_zone[1]}")
    lines.append("land_use_mix = " + ",".join(repr(v) for v in s.land_use_mix))
    lines.append("effects = " + "; ".join(e.text() for e in s.effects))
    lines.append(f"launch_date = {s.launch_date.isoformat()}")
    for lu, curve in s.rate_profiles.items():
        lines.append(f"rate_profile.{LandUse(lu).value} = "
                     + ",".join(f"{m}:{v!r}" for m, v in curve))
    for lu, (h, w) in s.anchor_weights.items():
        lines.append(f"anchor_weights.{LandUse(lu).value} = {h!r},{w!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# time-of-day curves

def _bump(t, centre, width):
    return np.exp(-0.5 * ((t - centre) / width) ** 2)


def _ramp(t, centre, width):
    return 1.0 / (1.0 + np.exp(-(t - centre) / width))


def activity_curve(day_class):
    """Relative device activity per minute of day, peak near 1."""
    t = np.arange(MINUTES_PER_DAY, dtype=float)
    if DayClass(day_class) == DayClass.BUSINESS_DAY:
        a = (0.08 + 0.5 * _ramp(t, 420, 25) * (1 - _ramp(t, 1410, 20))
             + 0.2 * _bump(t, 480, 45) + 0.15 * _bump(t, 780, 60) + 0.25 * _bump(t, 1260, 80))
    else:
        a = (0.1 + 0.45 * _ramp(t, 570, 40) * (1 - _ramp(t, 1430, 25))
             + 0.15 * _bump(t, 840, 90) + 0.3 * _bump(t, 1290, 80))
    return np.minimum(a, 1.0)


def rate_curve(points):
    m, v = zip(*points)
    return np.interp(np.arange(MINUTES_PER_DAY), m, v)


# ---------------------------------------------------------------------------
# city

@dataclass
class SyntheticCity:
    scenario: SynthScenario
    zones: list                 # with pokepoint counts attached, zone_id order
    towers: list
    tower_zone: np.ndarray
    pois: np.ndarray            # (n, 2) lon/lat
    poi_kinds: list
    home: np.ndarray            # zone index per device
    work: np.ndarray
    home_tower: np.ndarray      # tower index per device
    work_tower: np.ndarray
    leave: np.ndarray           # minute of day
    back: np.ndarray
    category: np.ndarray        # category code per device
    attractiveness: np.ndarray  # per zone

    @property
    def calendar(self):
        return self.scenario.calendar

    @property
    def grid(self):
        return self.scenario.grid

    @property
    def device_names(self):
        return [f"D{i:06d}" for i in range(len(self.home))]

    def config(self, base_dir="."):
        s = self.scenario
        return StudyConfig(calendar=self.calendar, grid=s.grid, launch_date=s.launch_date,
                           lowess_bandwidth_min=s.lowess_bandwidth_min, base_dir=Path(base_dir))


def _apportion(weights, total):
    """Largest-remainder integer allocation of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    share = w / w.sum() * total
    base = np.floor(share).astype(np.int64)
    rest = total - int(base.sum())
    order = np.lexsort((np.arange(len(w)), -(share - base)))
    base[order[:rest]] += 1
    return base


def _uniform_in_square(rng, ring, n, margin=0.1):
    (x0, y0), (x1, _), (_, y1) = ring[0], ring[1], ring[2]
    u = rng.uniform(margin, 1 - margin, size=(n, 2))
    return np.column_stack([x0 + u[:, 0] * (x1 - x0), y0 + u[:, 1] * (y1 - y0)])


def build_city(scenario):
    """Lay out zones, towers, POIs and device anchors."""
    s = scenario.validate()
    root = np.random.SeedSequence(s.seed)
    city_ss, dev_ss, _ = root.spawn(3)
    rng = np.random.Generator(np.random.PCG64(city_ss))

    areas = np.exp(rng.normal(math.log(AREA_MEDIAN_KM2), AREA_SIGMA, s.n_zones))
    areas = np.clip(areas, 0.05, MAX_ZONE_AREA_KM2)
    quota = _apportion(s.land_use_mix, s.n_zones)
    land = np.repeat(np.arange(3), quota)
    rng.shuffle(land)

    ncols = int(math.ceil(math.sqrt(s.n_zones)))
    pitch_km = math.sqrt(areas.max()) * 1.1 + 0.2
    km_per_deg = EARTH_RADIUS_KM * math.pi / 180.0
    lon0, lat0 = CITY_CENTER
    zones, pois, kinds, towers, tower_zone = [], [], [], [], []
    for k in range(s.n_zones):
        r, c = divmod(k, ncols)
        lat = lat0 + (r - (ncols - 1) / 2) * pitch_km / km_per_deg
        lon = lon0 + (c - (ncols - 1) / 2) * pitch_km / (km_per_deg * math.cos(math.radians(lat)))
        ring = square_ring(round(lon, 9), round(lat, 9), math.sqrt(areas[k]))
        ring = tuple((round(x, 9), round(y, 9)) for x, y in ring)
        zone_id = f"Z{k + 1:03d}"
        n_poi = max(1, int(rng.poisson(s.pokepoint_density * areas[k])))
        pts = _uniform_in_square(rng, ring, n_poi)
        pois.extend(pts.round(7).tolist())
        kinds.extend("PokeGym" if u < 0.1 else "PokeStop" for u in rng.random(n_poi))
        n_tow = int(rng.integers(s.towers_per_zone[0], s.towers_per_zone[1] + 1))
        for j, (x, y) in enumerate(_uniform_in_square(rng, ring, n_tow).round(7)):
            towers.append(Tower(f"T{k + 1:03d}_{j + 1}", float(x), float(y)))
            tower_zone.append(k)
        zones.append(ZoneRecord(zone_id, (ring,), LAND_USES[land[k]],
                                round(ring_area_km2(ring), 6), n_poi))
    pois = np.array(pois, dtype=float)
    # POIs are drawn inside their own square, so counting by containment
    # reproduces ``n_poi``; recount anyway so the stored value is the truth.
    idx = locate_points(pois[:, 0], pois[:, 1], zones)
    counts = np.bincount(idx[idx >= 0], minlength=len(zones))
    zones = [replace(z, pokepoint_count=int(n)) for z, n in zip(zones, counts)]
    tower_zone = np.array(tower_zone, dtype=np.int64)

    drng = np.random.Generator(np.random.PCG64(dev_ss))
    area = np.array([z.area_km2 for z in zones])
    pp = np.array([z.pokepoint_count for z in zones], dtype=float)
    lift = np.exp(s.pokepoint_attraction * pp)
    hw = np.array([s.anchor_weights[z.land_use] for z in zones], dtype=float)
    home = np.repeat(np.arange(s.n_zones), _apportion(area * hw[:, 0] * lift, s.devices))
    work = np.repeat(np.arange(s.n_zones), _apportion(area * hw[:, 1] * lift, s.devices))
    drng.shuffle(home)
    drng.shuffle(work)
    zone_towers = [np.flatnonzero(tower_zone == k) for k in range(s.n_zones)]
    home_tower = np.array([drng.choice(zone_towers[z]) for z in home], dtype=np.int64)
    work_tower = np.array([drng.choice(zone_towers[z]) for z in work], dtype=np.int64)
    leave = np.clip(np.rint(drng.normal(480, 45, s.devices)), 300, 720).astype(np.int64)
    back = np.clip(np.rint(drng.normal(1110, 60, s.devices)), 900, 1380).astype(np.int64)
    category = (drng.random(s.devices) < 0.4).astype(np.int64)
    sd = s.zone_heterogeneity
    attract = np.exp(drng.normal(0.0, sd, s.n_zones) - 0.5 * sd * sd) if sd > 0 \
        else np.ones(s.n_zones)
    return SyntheticCity(s, zones, towers, tower_zone, pois, kinds, home, work, home_tower,
                         work_tower, leave, back, category, attract)


# ---------------------------------------------------------------------------
# events

def presence_counts(city):
    """Devices present per (zone, minute of day) under the home/work schedule."""
    n_zone = len(city.zones)
    home = np.zeros((n_zone, MINUTES_PER_DAY + 1))
    work = np.zeros((n_zone, MINUTES_PER_DAY + 1))
    np.add.at(home, (city.home, 0), 1.0)
    np.add.at(home, (city.home, city.leave), -1.0)
    np.add.at(home, (city.home, city.back), 1.0)
    np.add.at(work, (city.work, city.leave), 1.0)
    np.add.at(work, (city.work, city.back), -1.0)
    return np.cumsum(home + work, axis=1)[:, :MINUTES_PER_DAY]


def effect_matrix(city, date):
    """Multiplier per (zone, minute of day) on ``date``."""
    s = city.scenario
    out = np.ones((len(city.zones), MINUTES_PER_DAY))
    if date not in set(city.calendar.post_dates):
        return out
    group = day_group(city.calendar.day_class[date])
    dens = np.array([z.density for z in city.zones])
    for e in s.effects:
        if not e.applies_to(group):
            continue
        m = np.full(len(city.zones), e.multiplier)
        if e.pokepoint_scaled:
            m = 1.0 + (e.multiplier - 1.0) * dens / dens.mean()
            m = np.maximum(m, 0.0)
        out[:, e.start_minute:e.end_minute + 1] *= m[:, None]
    return out


def simulate_day(city, day_number):
    """Events of one study date as an :class:`EventBatch` (minute-sorted)."""
    s = city.scenario
    dates = city.calendar.study_dates
    date = dates[day_number]
    ss = np.random.SeedSequence(s.seed).spawn(3)[2].spawn(len(dates))[day_number]
    rng = np.random.Generator(np.random.PCG64(ss))
    n_dev, n_zone = len(city.home), len(city.zones)
    t = np.arange(MINUTES_PER_DAY)

    at_work = (t[None, :] >= city.leave[:, None]) & (t[None, :] < city.back[:, None])

    land = [z.land_use for z in city.zones]
    zone_rate = np.array([rate_curve(s.rate_profiles[lu]) for lu in land])
    zone_rate *= city.attractiveness[:, None]
    zone_rate *= s.base_rate * activity_curve(city.calendar.day_class[date])[None, :]

    # Zone noise has relative variance dispersion + count_noise / expected
    # count over the block, i.e. NB2-like counts after smoothing.
    b = s.noise_block_min
    blocks = (MINUTES_PER_DAY + b - 1) // b
    expected = presence_counts(city) * zone_rate
    padded = np.pad(expected, ((0, 0), (0, blocks * b - MINUTES_PER_DAY)), mode="edge")
    block_mean = padded.reshape(n_zone, blocks, b).mean(axis=2)
    rel_var = s.dispersion + s.count_noise / np.maximum(block_mean, 1e-3)
    shape = 1.0 / np.maximum(rel_var, 1e-12)
    noise = rng.gamma(shape, 1.0 / shape) if np.any(rel_var > 0) else np.ones_like(shape)
    noise = np.repeat(noise, b, axis=1)[:, :MINUTES_PER_DAY]
    zone_rate *= noise * effect_matrix(city, date)
    p = np.where(at_work, zone_rate[city.work], zone_rate[city.home])
    fire = rng.random((n_dev, MINUTES_PER_DAY)) < p

    grid_mask = city.grid.mask(t)
    on_grid = fire[:, grid_mask]
    missing = np.flatnonzero(~on_grid.any(axis=1))
    if missing.size:
        grid_minutes = t[grid_mask]
        fire[missing, rng.choice(grid_minutes, size=missing.size)] = True

    dev, minute = np.nonzero(fire)
    if s.duplicate_rate > 0:
        extra = rng.poisson(s.duplicate_rate, size=len(dev))
        dev = np.concatenate([dev, np.repeat(dev, extra)])
        minute = np.concatenate([minute, np.repeat(minute, extra)])
    order = np.lexsort((dev, minute))
    dev, minute = dev[order], minute[order]
    tw = np.where(at_work[dev, minute], city.work_tower[dev], city.home_tower[dev])

    in_grid = grid_mask[minute]
    n_grid = np.bincount(dev[in_grid], minlength=n_dev)
    target_mib = np.exp(rng.uniform(math.log(5.0), math.log(300.0), size=n_dev))
    kib = np.where(in_grid, target_mib[dev] * 1024.0 / np.maximum(n_grid[dev], 1),
                   rng.uniform(0.0, 50.0, size=len(dev)))
    ordinal = np.full(len(dev), date.toordinal(), dtype=np.int64)
    return EventBatch(ordinal, minute.astype(np.int64), dev.astype(np.int64),
                      tw.astype(np.int64), kib, city.category[dev])


def simulate(city):
    """Zero-argument callable yielding one EventBatch per study date."""
    def batches():
        for k in range(len(city.calendar.study_dates)):
            yield simulate_day(city, k)
    return batches


# ---------------------------------------------------------------------------
# files

def _zones_geojson(zones):
    feats = []
    for z in zones:
        feats.append({
            "type": "Feature",
            "properties": {"zone_id": z.zone_id, "land_use": z.land_use.value,
                           "area_km2": z.area_km2},
            "geometry": {"type": "Polygon",
                         "coordinates": [[list(p) for p in ring] for ring in z.polygon]},
        })
    return {"type": "FeatureCollection", "features": feats}


def generate(scenario, out_dir):
    """Write events, towers, zones, POIs, study config and scenario to ``out_dir``.

    Returns the :class:`SyntheticCity`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    city = build_city(scenario)
    names = city.device_names
    towers = [t.tower_id for t in city.towers]

    with open(out / "towers.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("tower_id,lon,lat\n")
        for t in city.towers:
            fh.write(f"{t.tower_id},{t.lon!r},{t.lat!r}\n")
    with open(out / "pois.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("lon,lat,kind\n")
        for (x, y), kind in zip(city.pois.tolist(), city.poi_kinds):
            fh.write(f"{x!r},{y!r},{kind}\n")
    with open(out / "zones.geojson", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_zones_geojson(city.zones), fh, indent=1)
        fh.write("\n")
    with open(out / "events.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("timestamp,device_id,tower_id,kib,category\n")
        for k, date in enumerate(city.calendar.study_dates):
            b = simulate_day(city, k)
            ds = date.isoformat()
            fh.writelines(
                f"{ds}T{m // 60:02d}:{m % 60:02d},{names[d]},{towers[t]},{x:.6f},{CATEGORIES[c]}\n"
                for m, d, t, x, c in zip(b.minute.tolist(), b.device.tolist(),
                                         b.tower.tolist(), b.kib.tolist(),
                                         b.category.tolist()))
    write_config(city.config(out), out / "study.cfg")
    write_scenario(scenario, out / "scenario.txt")
    return city


# ---------------------------------------------------------------------------
# ground truth

@dataclass
class GroundTruth:
    """Expected IRR of the game factor per day group over the grid minutes."""

    grid: TimeGrid
    irr: dict            # group -> ndarray
    low: dict            # group -> ndarray, lower edge of the smoothing band
    high: dict
    windows: dict        # group -> list of (start, end, multiplier)

    def injected_minutes(self, group):
        return set(m for s, e, _ in self.windows[group] for m in range(s, e + 1))


def ground_truth(scenario, grid=None, bandwidth_min=None):
    """Step IRR inside each effect window (1 elsewhere) with a +-bandwidth/2 band.

    PokéPoint-scaled effects contribute their nominal multiplier, which is
    the multiplier at the mean density.
    """
    grid = grid or scenario.grid
    half = (bandwidth_min or scenario.lowess_bandwidth_min) // 2
    minutes = grid.minutes
    irr, low, high, windows = {}, {}, {}, {}
    for g in DAY_GROUPS:
        step = np.ones(len(minutes))
        wins = []
        for e in scenario.effects:
            if e.applies_to(g):
                inside = (minutes >= e.start_minute) & (minutes <= e.end_minute)
                step[inside] *= e.multiplier
                wins.append((e.start_minute, e.end_minute, e.multiplier))
        lo, hi = step.copy(), step.copy()
        for k in range(-half, half + 1):
            shifted = np.concatenate([step[max(k, 0):], np.full(max(k, 0), 1.0)])[:len(step)] \
                if k >= 0 else np.concatenate([np.full(-k, 1.0), step[:k]])
            lo = np.minimum(lo, shifted)
            hi = np.maximum(hi, shifted)
        irr[g], low[g], high[g], windows[g] = step, lo, hi, wins
    return GroundTruth(grid, irr, low, high, windows)


# ---------------------------------------------------------------------------
# recovery metrics

def dilate(minutes, radius, grid):
    out = set()
    for m in minutes:
        for k in range(m - radius, m + radius + 1):
            if grid.start_minute <= k <= grid.end_minute:
                out.add(k)
    return out


def window_minutes(windows):
    return set(m for w in windows for m in range(w.start_minute, w.end_minute + 1))


def tolerant_jaccard(recovered, injected, tolerance, grid):
    """Overlap of recovered and injected minute sets with an edge tolerance.

    Recovered minutes within ``tolerance`` of the injected set count as
    matches; the denominator is the union of recovered and injected minutes.
    """
    recovered, injected = set(recovered), set(injected)
    if not recovered and not injected:
        return 1.0
    zone = dilate(injected, tolerance, grid)
    return len(recovered & zone) / len(recovered | injected)
