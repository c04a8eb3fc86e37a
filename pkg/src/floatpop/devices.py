"""Device filtering: spatio-temporal event filter and per-device activity rules.

Rules, in attribution order:

(i)   event level: the event's tower lies in a selected zone and its minute
      is on the study grid;
(ii)  the device has at least one event on every study date;
(iii) its daily traffic is strictly between ``min_mib`` and ``max_mib`` on
      every study date (totals use grid-filtered events only);
(iv)  every service category it reports is in the allowlist.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

RULES = ("ii_not_active_every_day", "iii_traffic_out_of_bounds", "iv_category_not_allowed")
KIB_PER_MIB = 1024.0


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceDayStats:
    device_id: str
    date: object
    event_count: int
    total_mib: float

    @property
    def active(self):
        return self.event_count > 0


@dataclass
class DeviceFilterReport:
    input_devices: int = 0
    kept_devices: int = 0
    dropped_by_rule: dict = field(default_factory=lambda: {r: 0 for r in RULES})
    events_seen: int = 0
    events_outside_zones: int = 0
    events_outside_grid: int = 0
    events_outside_calendar: int = 0
    traffic_basis: str = "grid-filtered events (06:00-23:59 window)"

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# daily MiB totals computed over {self.traffic_basis}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["item", "count"])
        w.writerow(["events_seen", self.events_seen])
        w.writerow(["i_events_outside_zones", self.events_outside_zones])
        w.writerow(["i_events_outside_grid", self.events_outside_grid])
        w.writerow(["events_outside_calendar", self.events_outside_calendar])
        w.writerow(["input_devices", self.input_devices])
        for rule in RULES:
            w.writerow([rule, self.dropped_by_rule.get(rule, 0)])
        w.writerow(["kept_devices", self.kept_devices])
        return buf.getvalue()

    def summary(self):
        lines = [
            f"devices in filtered stream : {self.input_devices}",
            f"devices kept               : {self.kept_devices}",
        ]
        for rule in RULES:
            lines.append(f"  dropped by {rule:<26}: {self.dropped_by_rule.get(rule, 0)}")
        lines.append(f"events outside zones       : {self.events_outside_zones}")
        lines.append(f"events outside time grid   : {self.events_outside_grid}")
        lines.append(f"traffic totals computed on : {self.traffic_basis}")
        return "\n".join(lines)


def filter_events_spatiotemporal(events, zones, towers, grid):
    """Keep events at towers inside ``zones`` whose minute is on ``grid``."""
    from .aggregation import assign_towers

    in_zone = set(assign_towers(towers, zones))
    for ev in events:
        if ev.tower_id in in_zone and ev.minute in grid:
            yield ev


def batch_mask(batch, tower_in_zone, grid, report=None):
    """Vectorised rule (i) for an :class:`~floatpop.ingest.EventBatch`."""
    zone_ok = tower_in_zone[batch.tower]
    grid_ok = grid.mask(batch.minute)
    if report is not None:
        report.events_seen += len(batch)
        report.events_outside_zones += int(np.count_nonzero(~zone_ok))
        report.events_outside_grid += int(np.count_nonzero(zone_ok & ~grid_ok))
    return zone_ok & grid_ok


class DayStatsAccumulator:
    """Per (device, study date) event counts and KiB totals.

    Feed it rule-(i)-filtered batches; the arrays grow with the device
    vocabulary.  Accumulation is a sum, so sharded accumulators merge
    with :meth:`merge`.
    """

    def __init__(self, calendar):
        dates = calendar.study_dates
        if not dates:
            raise ConfigurationError("empty study calendar")
        self.dates = dates
        self._ordinals = np.array([d.toordinal() for d in dates])
        self.counts = np.zeros((0, len(dates)), dtype=np.int64)
        self.kib = np.zeros((0, len(dates)), dtype=float)
        self.categories = set()
        self.seen = np.zeros(0, dtype=bool)

    def _grow(self, n):
        if n > self.counts.shape[0]:
            extra = n - self.counts.shape[0]
            self.counts = np.vstack([self.counts, np.zeros((extra, len(self.dates)), np.int64)])
            self.kib = np.vstack([self.kib, np.zeros((extra, len(self.dates)))])
            self.seen = np.concatenate([self.seen, np.zeros(extra, dtype=bool)])

    def date_index(self, ordinals):
        pos = np.searchsorted(self._ordinals, ordinals)
        pos = np.clip(pos, 0, len(self._ordinals) - 1)
        return np.where(self._ordinals[pos] == ordinals, pos, -1)

    def add(self, batch, report=None):
        if len(batch) == 0:
            return
        self._grow(int(batch.device.max()) + 1)
        self.seen[batch.device] = True
        di = self.date_index(batch.date)
        ok = di >= 0
        if report is not None:
            report.events_outside_calendar += int(np.count_nonzero(~ok))
        n_dates = len(self.dates)
        cell = batch.device[ok] * n_dates + di[ok]
        size = self.counts.size
        self.counts += np.bincount(cell, minlength=size).reshape(self.counts.shape)
        self.kib += np.bincount(cell, weights=batch.kib[ok], minlength=size).reshape(self.kib.shape)
        keys = np.unique((batch.device.astype(np.int64) << 20) | batch.category.astype(np.int64))
        self.categories.update(zip((keys >> 20).tolist(), (keys & 0xFFFFF).tolist()))

    def merge(self, other):
        n = max(self.counts.shape[0], other.counts.shape[0])
        self._grow(n)
        other._grow(n)
        self.counts += other.counts
        self.kib += other.kib
        self.seen |= other.seen
        self.categories |= other.categories
        return self

    def records(self, device_names):
        for dev in np.flatnonzero(self.seen):
            for j, d in enumerate(self.dates):
                yield DeviceDayStats(device_names[dev], d, int(self.counts[dev, j]),
                                     float(self.kib[dev, j] / KIB_PER_MIB))


def select_devices(stats, calendar, min_mib=2.5, max_mib=500.0, allowlist=None,
                   category_names=None, report=None):
    """Apply rules (ii)-(iv) to accumulated day statistics.

    Parameters
    ----------
    stats : DayStatsAccumulator
    calendar : StudyCalendar
    allowlist : iterable of str, optional
        Allowed service categories; ``None`` accepts all.
    category_names : sequence of str
        Category code -> name, needed when ``allowlist`` is given.

    Returns
    -------
    kept : ndarray of bool, indexed by device code
    report : DeviceFilterReport
    """
    if not calendar.study_dates:
        raise ConfigurationError("empty study calendar")
    report = report or DeviceFilterReport()
    n = stats.counts.shape[0]
    seen = stats.seen
    mib = stats.kib / KIB_PER_MIB

    rule_ii = np.all(stats.counts > 0, axis=1)
    rule_iii = np.all((mib > min_mib) & (mib < max_mib), axis=1)
    rule_iv = np.ones(n, dtype=bool)
    if allowlist is not None:
        allowed = set(allowlist)
        for dev, cat in stats.categories:
            if category_names[cat] not in allowed:
                rule_iv[dev] = False

    remaining = seen.copy()
    for rule, ok in zip(RULES, (rule_ii, rule_iii, rule_iv)):
        dropped = remaining & ~ok
        report.dropped_by_rule[rule] = int(np.count_nonzero(dropped))
        remaining &= ok
    report.input_devices = int(np.count_nonzero(seen))
    report.kept_devices = int(np.count_nonzero(remaining))
    return remaining, report
