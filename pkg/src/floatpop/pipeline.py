"""Event stream -> device selection -> tower counts -> smoothing -> zone profiles.

The stream is read twice: once to accumulate per-device day statistics for
device selection, once to count distinct kept devices per tower and minute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import ZoneProfiles, aggregate_zone, tower_zone_index
from .devices import DayStatsAccumulator, DeviceFilterReport, batch_mask, select_devices
from .ingest import RejectionReport, Vocabulary, iter_event_batches
from .smoothing import TowerCountAccumulator, lowess_smooth


@dataclass
class PipelineResult:
    towers: list
    zones: list
    calendar: object
    grid: object
    tower_zone: np.ndarray        # zone index per tower, -1 if unmapped
    kept: np.ndarray              # bool per device code
    report: DeviceFilterReport
    raw_counts: np.ndarray        # (tower, date, minute) distinct devices
    smoothed: np.ndarray          # (tower, date, minute)
    profiles: ZoneProfiles
    device_names: list | None = None
    rejections: RejectionReport | None = None


def select_from_batches(batches, towers, zones, calendar, grid, min_mib=2.5, max_mib=500.0,
                        allowlist=None, category_names=None):
    """First pass: rule (i) per event, then rules (ii)-(iv) per device.

    Returns
    -------
    kept : ndarray of bool
    report : DeviceFilterReport
    stats : DayStatsAccumulator
    """
    tower_in_zone = tower_zone_index(towers, zones) >= 0
    report = DeviceFilterReport()
    stats = DayStatsAccumulator(calendar)
    for batch in batches():
        stats.add(batch.take(batch_mask(batch, tower_in_zone, grid, report)), report)
    kept, report = select_devices(stats, calendar, min_mib, max_mib, allowlist,
                                  category_names, report)
    return kept, report, stats


def _lookup(mask, codes):
    out = np.zeros(len(codes), dtype=bool)
    inside = codes < len(mask)
    out[inside] = mask[codes[inside]]
    return out


def count_from_batches(batches, kept, towers, zones, calendar, grid, flush_each_batch=False):
    """Second pass: distinct kept devices per (tower, date, minute).

    ``flush_each_batch`` is only valid when every batch holds complete
    (tower, date, minute) cells, e.g. one batch per date.
    """
    tower_in_zone = tower_zone_index(towers, zones) >= 0
    stats = DayStatsAccumulator(calendar)
    acc = TowerCountAccumulator(len(towers), len(calendar.study_dates), stats.date_index, grid)
    for batch in batches():
        ok = batch_mask(batch, tower_in_zone, grid)
        ok &= _lookup(kept, batch.device)
        acc.add(batch.take(ok))
        if flush_each_batch:
            acc.flush()
    return acc.result()


def profiles_from_counts(raw, towers, zones, calendar, grid, bandwidth_min=30):
    """Smooth tower counts and sum them into zone profiles."""
    tower_zone = tower_zone_index(towers, zones)
    smoothed = lowess_smooth(raw, bandwidth_min)
    values = aggregate_zone(smoothed, tower_zone, len(zones), [t.tower_id for t in towers])
    profiles = ZoneProfiles(tuple(z.zone_id for z in zones), calendar.study_dates, grid, values)
    return tower_zone, smoothed, profiles


def run_batches(batches, towers, zones, calendar, grid, bandwidth_min=30, min_mib=2.5,
                max_mib=500.0, allowlist=None, category_names=None, flush_each_batch=False):
    """Full pipeline over a re-iterable batch source (a zero-argument callable)."""
    kept, report, _ = select_from_batches(batches, towers, zones, calendar, grid, min_mib,
                                          max_mib, allowlist, category_names)
    raw = count_from_batches(batches, kept, towers, zones, calendar, grid, flush_each_batch)
    tower_zone, smoothed, profiles = profiles_from_counts(raw, towers, zones, calendar, grid,
                                                          bandwidth_min)
    return PipelineResult(list(towers), list(zones), calendar, grid, tower_zone, kept, report,
                          raw, smoothed, profiles)


def run_dataset(dataset, kept=None):
    """Pipeline over a :class:`~floatpop.ingest.Dataset` read from disk.

    When ``kept`` (a set of device ids) is given, the selection pass is
    skipped and only those devices are counted.
    """
    cfg = dataset.config
    devices, categories = Vocabulary(), Vocabulary()
    rejections = RejectionReport()

    def batches():
        return iter_event_batches(dataset.events_path, dataset.towers, devices, categories,
                                  rejections)

    args = (dataset.towers, dataset.zones, dataset.calendar, dataset.grid)
    if kept is None:
        kept_mask, report, _ = select_from_batches(batches, *args, cfg.min_mib, cfg.max_mib,
                                                   cfg.category_allowlist, categories.items)
    else:
        for dev in sorted(kept):
            devices.code(dev)
        kept_mask = np.ones(len(devices), dtype=bool)
        report = None
    raw = count_from_batches(batches, kept_mask, *args)
    tower_zone, smoothed, profiles = profiles_from_counts(raw, *args, cfg.lowess_bandwidth_min)
    return PipelineResult(list(dataset.towers), list(dataset.zones), dataset.calendar,
                          dataset.grid, tower_zone, kept_mask, report, raw, smoothed, profiles,
                          device_names=list(devices.items), rejections=rejections)
