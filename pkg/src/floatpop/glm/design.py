"""Design matrices for the per-minute regressions.

Rows are (date, zone) pairs in date-major order.  Categorical covariates use
dummy coding against a reference level: game unavailable (``pogo = 0``),
``business_day`` and ``residential``.  When a reference level is absent from
the rows (e.g. a weekend-only sweep) the first present level becomes the
reference.  Columns that are all zero or linearly dependent on earlier
columns are dropped and listed in :attr:`SweepDesign.dropped`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import DayClass, LandUse
from .fit import DesignMatrix

MODELS = ("full", "minimal", "interactions")

_DAY_LEVELS = (DayClass.BUSINESS_DAY, DayClass.SATURDAY, DayClass.SUNDAY)
_LAND_LEVELS = (LandUse.RESIDENTIAL, LandUse.BUSINESS_ONLY, LandUse.MIXED_ACTIVITIES)


@dataclass(frozen=True)
class SweepDesign:
    """A design matrix plus the (date, zone) layout of its rows."""

    design: DesignMatrix
    zone_ids: tuple
    dates: tuple
    dropped: tuple = ()

    @property
    def names(self):
        return self.design.names

    def response_matrix(self, values):
        """Reshape a ``(zone, date, minute)`` cube to ``(minute, row)`` counts.

        Values are rounded half-to-even, matching ``numpy.rint``.
        """
        v = np.asarray(values, dtype=float)
        flat = np.transpose(v, (2, 1, 0)).reshape(v.shape[2], -1)
        return np.rint(flat)


def _dummies(levels_per_row, ordered_levels):
    present = [lv for lv in ordered_levels if lv in set(levels_per_row)]
    if not present:
        return [], []
    cols, names = [], []
    for lv in present[1:]:
        cols.append(np.array([r == lv for r in levels_per_row], dtype=float))
        names.append(lv.value)
    return names, cols


def build_design(zones, calendar, dates=None, model="full"):
    """Build the regression design for ``zones`` x ``dates``.

    Parameters
    ----------
    zones : sequence of ZoneRecord
    calendar : StudyCalendar
    dates : sequence of date, optional
        Defaults to every study date.
    model : {"full", "minimal", "interactions"}
        ``minimal`` keeps only intercept and ``pogo``; ``interactions`` adds
        ``pogo`` x day-class and ``pogo`` x land-use products to ``full``.

    Returns
    -------
    SweepDesign
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    dates = tuple(calendar.study_dates if dates is None else dates)
    if not dates or not zones:
        raise ValueError("design needs at least one zone and one date")
    n = len(dates) * len(zones)
    post = set(calendar.post_dates)
    row_date = [d for d in dates for _ in zones]
    row_zone = [z for _ in dates for z in zones]

    names = ["intercept", "pogo"]
    cols = [np.ones(n), np.array([d in post for d in row_date], dtype=float)]
    if model != "minimal":
        day_names, day_cols = _dummies([calendar.day_class[d] for d in row_date], _DAY_LEVELS)
        land_names, land_cols = _dummies([z.land_use for z in row_zone], _LAND_LEVELS)
        names += day_names + land_names + ["pokepoints"]
        cols += day_cols + land_cols + [np.array([z.pokepoint_count for z in row_zone], float)]
        if model == "interactions":
            for nm, c in zip(day_names + land_names, day_cols + land_cols):
                names.append(f"pogo:{nm}")
                cols.append(cols[1] * c)

    kept_names, kept_cols, dropped = [], [], []
    rank = 0
    for nm, c in zip(names, cols):
        if not np.any(c):
            dropped.append(nm)
            continue
        trial = np.column_stack(kept_cols + [c])
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            kept_names.append(nm)
            kept_cols.append(c)
            rank = r
        else:
            dropped.append(nm)

    offset = np.log(np.array([z.area_km2 for z in row_zone], dtype=float))
    design = DesignMatrix(tuple(kept_names), np.column_stack(kept_cols), offset)
    return SweepDesign(design, tuple(z.zone_id for z in zones), dates, tuple(dropped))
