"""Tower-to-zone assignment and zone floating-population profiles."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass

import numpy as np

from .model import TimeGrid, locate_points


@dataclass(frozen=True)
class ZoneProfile:
    zone_id: str
    date: dt.date
    values: np.ndarray


@dataclass
class ZoneProfiles:
    """Cube of zone profiles: ``values[zone, date, minute]``."""

    zone_ids: tuple
    dates: tuple
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.zone_ids = tuple(self.zone_ids)
        self.dates = tuple(self.dates)
        expected = (len(self.zone_ids), len(self.dates), len(self.grid))
        if self.values.shape != expected:
            raise ValueError(f"profile cube has shape {self.values.shape}, expected {expected}")

    def profile(self, zone_id, date):
        i = self.zone_ids.index(zone_id)
        j = self.dates.index(date)
        return ZoneProfile(zone_id, date, self.values[i, j])

    def __iter__(self):
        for i, z in enumerate(self.zone_ids):
            for j, d in enumerate(self.dates):
                yield ZoneProfile(z, d, self.values[i, j])

    def subset_zones(self, zone_ids):
        idx = [self.zone_ids.index(z) for z in zone_ids]
        return ZoneProfiles(tuple(zone_ids), self.dates, self.grid, self.values[idx])


def assign_towers(towers, zones):
    """Map ``tower_id -> zone_id`` for towers inside a zone (first match wins)."""
    lon = np.array([t.lon for t in towers], dtype=float)
    lat = np.array([t.lat for t in towers], dtype=float)
    idx = locate_points(lon, lat, zones)
    return {t.tower_id: zones[k].zone_id for t, k in zip(towers, idx) if k >= 0}


def tower_zone_index(towers, zones):
    """Zone index per tower (``-1`` when unmapped), aligned with ``towers``."""
    mapping = assign_towers(towers, zones)
    pos = {z.zone_id: k for k, z in enumerate(zones)}
    return np.array([pos.get(mapping.get(t.tower_id), -1) for t in towers], dtype=np.int64)


def aggregate_zone(smoothed, tower_zone, n_zones, tower_ids=None):
    """Sum smoothed tower series into zone series.

    Parameters
    ----------
    smoothed : ndarray, shape (n_towers, ...)
        Smoothed series per tower; towers without data are all-zero rows.
    tower_zone : ndarray of int, shape (n_towers,)
        Zone index per tower, ``-1`` for unmapped towers.
    n_zones : int
    tower_ids : sequence of str, optional
        When given, each zone's towers are summed in ``tower_id`` order so the
        result does not depend on how the tower list is ordered.

    Returns
    -------
    ndarray, shape (n_zones, ...)
    """
    smoothed = np.asarray(smoothed, dtype=float)
    out = np.zeros((n_zones,) + smoothed.shape[1:])
    order = np.arange(len(tower_zone))
    if tower_ids is not None:
        order = np.array(sorted(order, key=lambda i: tower_ids[i]), dtype=np.int64)
    tz = np.asarray(tower_zone)[order]
    for z in range(n_zones):
        members = order[tz == z]
        if members.size:
            out[z] = smoothed[members].sum(axis=0)
    return out


def aggregate_zone_series(tower_series, assignment, zones, date):
    """List-based variant: ``{tower_id: values}`` -> one ZoneProfile per zone.

    Towers assigned to a zone but absent from ``tower_series`` count as zero.
    """
    ids = sorted(tower_series)
    length = len(next(iter(tower_series.values()))) if tower_series else 0
    out = []
    for z in zones:
        members = [t for t in ids if assignment.get(t) == z.zone_id]
        if members:
            values = np.sum([np.asarray(tower_series[t], dtype=float) for t in members], axis=0)
        else:
            values = np.zeros(length)
        out.append(ZoneProfile(z.zone_id, date, values))
    return out


def write_profiles(path, profiles):
    """CSV ``zone_id,date,minute,value``."""
    minutes = profiles.grid.minutes.tolist()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", "date", "minute", "value"])
        for i, z in enumerate(profiles.zone_ids):
            for j, d in enumerate(profiles.dates):
                ds = d.isoformat()
                for m, v in zip(minutes, profiles.values[i, j].tolist()):
                    w.writerow([z, ds, m, repr(v)])


def read_profiles(path, grid):
    """Inverse of :func:`write_profiles`."""
    zone_pos, date_pos, rows = {}, {}, []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["zone_id", "date", "minute", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for zone_id, date, minute, value in r:
            zone_pos.setdefault(zone_id, len(zone_pos))
            d = dt.date.fromisoformat(date)
            date_pos.setdefault(d, len(date_pos))
            rows.append((zone_pos[zone_id], date_pos[d], int(minute), float(value)))
    values = np.zeros((len(zone_pos), len(date_pos), len(grid)))
    for zi, di, m, v in rows:
        values[zi, di, int(grid.index(m))] = v
    return ZoneProfiles(tuple(zone_pos), tuple(date_pos), grid, values)
