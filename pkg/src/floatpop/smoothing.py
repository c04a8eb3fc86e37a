"""Unique-device counts per tower and minute, and their LOWESS smoothing.

The smoother is a single-pass local linear fit with tri-cube weights over
a fixed time window of ``bandwidth_min`` minutes (``+-bandwidth_min / 2``
around each minute).  Zero-count minutes are data, not gaps.  On a regular
grid the weighted normal equations only need five shifted sums per point,
so whole stacks of series are smoothed at once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RawTowerSeries:
    tower_id: str
    date: object
    counts: np.ndarray


@dataclass(frozen=True)
class SmoothedSeries:
    key: str
    date: object
    values: np.ndarray


def count_unique_devices(events, grid, tower_id=None, date=None):
    """Distinct devices per grid minute for one tower and date."""
    seen = set()
    counts = np.zeros(len(grid), dtype=np.int64)
    for ev in events:
        if ev.minute not in grid:
            continue
        key = (ev.device_id, ev.minute)
        if key not in seen:
            seen.add(key)
            counts[int(grid.index(ev.minute))] += 1
    return RawTowerSeries(tower_id, date, counts)


class TowerCountAccumulator:
    """Distinct-device counts on a (tower, study date, grid minute) cube.

    Batches are buffered as (cell, device) keys and deduplicated on
    :meth:`flush`.  Flushing is only safe when no later batch can repeat a
    pending (device, tower, date, minute) key, e.g. at a date boundary of a
    date-ordered stream; :meth:`result` always flushes first.
    """

    def __init__(self, n_towers, n_dates, date_index, grid, compact_every=5_000_000):
        self.date_index = date_index
        self.grid = grid
        self.n_dates = n_dates
        self.counts = np.zeros((n_towers, n_dates, len(grid)), dtype=np.int64)
        self._pending = []
        self._pending_len = 0
        self._compact_every = compact_every

    def add(self, batch):
        """Buffer a batch; events off the calendar or grid are ignored."""
        if len(batch) == 0:
            return
        di = self.date_index(batch.date)
        ok = (di >= 0) & self.grid.mask(batch.minute)
        gi = self.grid.index(batch.minute[ok])
        cell = (batch.tower[ok] * self.n_dates + di[ok]) * len(self.grid) + gi
        keys = (cell.astype(np.int64) << 32) | batch.device[ok].astype(np.int64)
        self._pending.append(keys)
        self._pending_len += len(keys)
        if self._pending_len > self._compact_every:
            merged = np.unique(np.concatenate(self._pending))
            self._pending = [merged]
            self._pending_len = len(merged)

    def flush(self):
        if not self._pending:
            return
        keys = np.unique(np.concatenate(self._pending))
        cells = keys >> 32
        flat = self.counts.reshape(-1)
        flat += np.bincount(cells, minlength=flat.size).astype(np.int64)
        self._pending = []
        self._pending_len = 0

    def result(self):
        self.flush()
        return self.counts


def tricube_weights(bandwidth_min, step=1):
    """Offsets (in grid steps) and tri-cube weights of the smoothing window."""
    if bandwidth_min < 3:
        raise ValueError("bandwidth_min must be >= 3")
    half = bandwidth_min / 2.0 / step
    k = np.arange(-int(np.floor(half)), int(np.floor(half)) + 1)
    u = np.abs(k) / half
    w = np.where(u < 1.0, (1.0 - u**3) ** 3, 0.0)
    keep = w > 0
    return k[keep], w[keep]


def lowess_smooth(values, bandwidth_min=30, step=1, clamp=True):
    """Local linear tri-cube smoothing along the last axis.

    Parameters
    ----------
    values : array_like, shape (..., n)
        Series on a regular grid with spacing ``step`` minutes.
    bandwidth_min : int
        Full window width in minutes.
    clamp : bool
        Clip negative fitted values to zero.

    Returns
    -------
    ndarray of float, same shape as ``values``
    """
    y = np.asarray(values, dtype=float)
    n = y.shape[-1]
    offsets, weights = tricube_weights(bandwidth_min, step)
    pad = int(np.max(np.abs(offsets)))
    lead = [(0, 0)] * (y.ndim - 1)
    yp = np.pad(y, lead + [(pad, pad)])
    valid = np.pad(np.ones(n), (pad, pad))

    s0 = np.zeros(n)
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    t0 = np.zeros(y.shape)
    t1 = np.zeros(y.shape)
    for k, w in zip(offsets, weights):
        lo = pad + k
        v = valid[lo:lo + n] * w
        s0 += v
        s1 += v * k
        s2 += v * k * k
        yk = yp[..., lo:lo + n] * w
        t0 += yk
        t1 += yk * k

    det = s0 * s2 - s1 * s1
    good = det > 1e-12 * np.maximum(s0 * s2, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        fit = np.where(good, (s2 * t0 - s1 * t1) / np.where(good, det, 1.0), t0 / s0)
    if clamp:
        fit = np.maximum(fit, 0.0)
    return fit


def normalize_global(series):
    """Divide every value by the single maximum over all series."""
    arrays = [np.asarray(s, dtype=float) for s in series]
    peak = max((a.max() for a in arrays if a.size), default=0.0)
    if not peak > 0:
        raise ValueError("nothing to normalize")
    return [a / peak for a in arrays]


def write_debug_dump(path, keys, dates, grid, raw, smoothed):
    """CSV ``key,date,minute,raw,smoothed`` for a (key, date, minute) cube."""
    minutes = grid.minutes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "date", "minute", "raw", "smoothed"])
        for i, key in enumerate(keys):
            for j, d in enumerate(dates):
                for m, r, s in zip(minutes, raw[i, j], smoothed[i, j]):
                    w.writerow([key, d.isoformat(), int(m), repr(float(r)), repr(float(s))])
