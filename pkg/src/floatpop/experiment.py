"""Per-minute regression sweep and its post-analysis.

A sweep fits one count regression per grid minute.  The observations at
minute ``t`` are the rounded zone profiles ``S[z, d, t]`` for every zone and
date in the sweep, all sharing one design matrix.  Post-analysis extracts
significant windows, zone difference maps and their correlation with
PokéPoint density.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .glm.design import build_design
from .glm.fit import Z_95, GLMError, SnapshotFit, fit_negbin, fit_poisson, safe_exp
from .model import DAY_GROUPS, format_minute

log = logging.getLogger(__name__)

NONCONVERGENCE_WARN = 0.05


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class EffectWindow:
    factor: str
    start_minute: int
    end_minute: int
    max_irr: float
    minute_of_max: int
    direction: str

    @property
    def length(self):
        return self.end_minute - self.start_minute + 1

    def label(self):
        return f"{format_minute(self.start_minute)} - {format_minute(self.end_minute)}"


@dataclass(frozen=True)
class ZoneDifference:
    zone_id: str
    day_group: str
    minute: int
    diff_per_km2: float


@dataclass
class SweepResult:
    fits: list
    names: tuple
    dropped: tuple
    model: str
    day_group: str
    n_obs: int
    warnings: list = field(default_factory=list)

    @property
    def n_nonconverged(self):
        return sum(not f.converged for f in self.fits)

    def series(self, name, attr="beta"):
        """Per-minute array of a coefficient attribute (``beta``, ``se``, ``p``, ``irr``)."""
        out = np.full(len(self.fits), np.nan)
        if name not in self.names:
            return out
        k = self.names.index(name)
        for i, f in enumerate(self.fits):
            if attr == "beta":
                out[i] = f.beta[k]
            elif attr == "se":
                out[i] = f.se[k]
            elif attr == "irr":
                out[i] = safe_exp(f.beta[k])
            elif attr == "p":
                out[i] = _p_value(f, k)
            else:
                raise ValueError(attr)
        return out


def _p_value(fit, k):
    b, s = fit.beta[k], fit.se[k]
    if not (fit.converged and np.isfinite(b) and np.isfinite(s) and s > 0):
        return float("nan")
    return math.erfc(abs(b / s) / math.sqrt(2.0))


def _failed_fit(names, n_obs, minute, reason):
    nan = np.full(len(names), np.nan)
    return SnapshotFit(tuple(names), nan, nan.copy(), float("nan"), False, n_obs, float("nan"),
                       minute=minute, flags=(reason,))


def _fit_chunk(args):
    design, minutes, responses, family = args
    out = []
    for m, y in zip(minutes, responses):
        d = design.with_response(y)
        try:
            fit = fit_negbin(d, minute=int(m)) if family == "negbin" else fit_poisson(d, minute=int(m))
        except GLMError as exc:
            fit = _failed_fit(design.names, design.n_obs, int(m), str(exc))
        out.append(fit)
    return out


def resolve_jobs(jobs):
    if jobs is None or jobs <= 0:
        return os.cpu_count() or 1
    return int(jobs)


def run_sweep(profiles, zones, calendar, grid=None, model="full", day_group=None, jobs=1,
              family="negbin"):
    """Fit one regression per grid minute.

    Parameters
    ----------
    profiles : ZoneProfiles
        Must cover every zone in ``zones`` and every study date.
    zones : sequence of ZoneRecord
    calendar : StudyCalendar
    grid : TimeGrid, optional
        Defaults to ``profiles.grid``.
    model : {"full", "minimal", "interactions"}
    day_group : {None, "all", "business", "weekend"}
        Restrict observations to one group of dates.
    jobs : int
        Worker processes; ``0`` picks the CPU count.  Results do not depend
        on it, because every minute is fitted from the same cold start.

    Returns
    -------
    SweepResult
    """
    grid = grid or profiles.grid
    dates = calendar.dates_in_group(day_group)
    if not dates:
        raise AnalysisError(f"no study dates in day group {day_group!r}")
    missing = [z.zone_id for z in zones if z.zone_id not in profiles.zone_ids]
    missing += [d.isoformat() for d in dates if d not in profiles.dates]
    missing += [format_minute(m) for m in grid.minutes if m not in profiles.grid]
    if missing:
        raise AnalysisError(f"profiles do not cover: {', '.join(missing[:5])}")
    sd = build_design(zones, calendar, dates, model)
    zi = [profiles.zone_ids.index(z.zone_id) for z in zones]
    di = [profiles.dates.index(d) for d in dates]
    gi = profiles.grid.index(grid.minutes)
    cube = profiles.values[np.ix_(zi, di, gi)]
    Y = sd.response_matrix(cube)
    minutes = grid.minutes.tolist()

    jobs = resolve_jobs(jobs)
    n_chunks = max(1, min(len(minutes), jobs * 4))
    bounds = np.linspace(0, len(minutes), n_chunks + 1).astype(int)
    tasks = [(sd.design, minutes[a:b], Y[a:b], family) for a, b in zip(bounds[:-1], bounds[1:])]
    if jobs == 1:
        chunks = [_fit_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_fit_chunk, tasks))
    fits = [f for c in chunks for f in c]

    result = SweepResult(fits, sd.names, sd.dropped, model, day_group or "all", sd.design.n_obs)
    bad = result.n_nonconverged
    if bad > NONCONVERGENCE_WARN * len(fits):
        msg = f"{bad} of {len(fits)} minutes did not converge"
        log.warning(msg)
        result.warnings.append(msg)
    if sd.dropped:
        result.warnings.append(f"dropped design columns: {', '.join(sd.dropped)}")
    return result


def extract_windows(fits, factor, alpha_sig=0.05, step=1):
    """Maximal runs of consecutive minutes with ``p(factor) < alpha_sig``.

    Minutes whose fit did not converge count as not significant.
    """
    fits = sorted(fits, key=lambda f: f.minute)
    windows, run = [], []

    def close():
        if not run:
            return
        best = None
        for f, b in run:
            if best is None or abs(b) > abs(best[1]):
                best = (f.minute, b)
        irr = safe_exp(best[1])
        windows.append(EffectWindow(factor, run[0][0].minute, run[-1][0].minute, irr, best[0],
                                    "positive" if best[1] > 0 else "negative"))
        run.clear()

    for f in fits:
        if factor not in f.names:
            close()
            continue
        k = f.names.index(factor)
        p = _p_value(f, k)
        significant = p < alpha_sig
        if run and f.minute - run[-1][0].minute != step:
            close()
        if significant:
            run.append((f, float(f.beta[k])))
        else:
            close()
    close()
    return windows


def zone_differences(profiles, zones, calendar, day_group, pre_dates=None, post_dates=None):
    """Per-zone ``(mean post - mean pre) / area`` for every grid minute.

    Returns
    -------
    ndarray, shape (n_zones, n_minutes)
        Row order follows ``zones``.
    """
    group_dates = set(calendar.dates_in_group(day_group))
    pre = [d for d in (pre_dates or calendar.pre_dates) if d in group_dates]
    post = [d for d in (post_dates or calendar.post_dates) if d in group_dates]
    if not pre or not post:
        raise AnalysisError(f"day group {day_group!r} needs dates on both sides of the launch")
    zi = [profiles.zone_ids.index(z.zone_id) for z in zones]
    v = profiles.values[zi]
    pre_mean = v[:, [profiles.dates.index(d) for d in pre]].mean(axis=1)
    post_mean = v[:, [profiles.dates.index(d) for d in post]].mean(axis=1)
    area = np.array([z.area_km2 for z in zones], dtype=float)
    return (post_mean - pre_mean) / area[:, None]


def differences_at(diff_matrix, zones, grid, day_group, minute):
    col = int(grid.index(minute))
    return [ZoneDifference(z.zone_id, day_group, int(minute), float(diff_matrix[i, col]))
            for i, z in enumerate(zones)]


def pearson(x, y):
    """Pearson r and two-sided p from the t distribution with n - 2 df."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n != len(y) or n < 3:
        raise AnalysisError("correlation needs at least 3 paired values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx <= 0 or syy <= 0:
        raise AnalysisError("degenerate correlation")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * sps.t.sf(abs(t), n - 2))


def pokepoint_correlation(diffs, zones):
    """Correlate ZoneDifference values with PokéPoints per km2 across zones."""
    by_id = {z.zone_id: z for z in zones}
    x = [d.diff_per_km2 for d in diffs]
    y = [by_id[d.zone_id].density for d in diffs]
    return pearson(x, y)


def _geometry(zone):
    if zone.geometry is not None:
        return zone.geometry
    return {"type": "Polygon", "coordinates": [[list(p) for p in ring] for ring in zone.polygon]}


def export_choropleth(diffs, zones):
    """GeoJSON FeatureCollection of ZoneDifference values."""
    by_id = {z.zone_id: z for z in zones}
    features = []
    for d in diffs:
        features.append({
            "type": "Feature",
            "properties": {"zone_id": d.zone_id, "diff_per_km2": d.diff_per_km2,
                           "day_group": d.day_group, "minute": d.minute},
            "geometry": _geometry(by_id[d.zone_id]),
        })
    return {"type": "FeatureCollection", "features": features}


def irr_timeseries_report(fits, factors, alpha_sig=0.05):
    """Rows of per-minute IRR, CI, p and dispersion for each factor.

    ``ci_excludes_1`` flags minutes whose 95% interval misses 1;
    ``p_bonferroni`` multiplies p by the number of minutes (capped at 1).
    """
    n = len(fits)
    rows = []
    for f in sorted(fits, key=lambda f: f.minute):
        for name in factors:
            if name not in f.names:
                continue
            k = f.names.index(name)
            b, s = float(f.beta[k]), float(f.se[k])
            p = _p_value(f, k)
            lo, hi = safe_exp(b - Z_95 * s), safe_exp(b + Z_95 * s)
            rows.append({
                "minute": f.minute,
                "time": format_minute(f.minute),
                "factor": name,
                "irr": safe_exp(b),
                "ci_low": lo,
                "ci_high": hi,
                "p": p,
                "p_bonferroni": min(1.0, p * n) if p == p else p,
                "alpha": float(f.alpha),
                "ci_excludes_1": bool(lo > 1.0 or hi < 1.0),
                "significant": bool(p < alpha_sig),
                "converged": f.converged,
            })
    return rows


# ---------------------------------------------------------------------------
# writers

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


FITS_HEADER = ["day_group", "minute", "time", "regressor", "beta", "se", "z", "p", "p_bonferroni",
               "irr", "ci_low", "ci_high", "alpha", "converged", "poisson_limit", "n_obs",
               "log_likelihood"]


def fit_rows(result):
    n = len(result.fits)
    rows = []
    for f in result.fits:
        for k, name in enumerate(f.names):
            b, s = float(f.beta[k]), float(f.se[k])
            p = _p_value(f, k)
            rows.append({
                "day_group": result.day_group, "minute": f.minute,
                "time": format_minute(f.minute), "regressor": name, "beta": b, "se": s,
                "z": b / s if s > 0 else float("nan"), "p": p,
                "p_bonferroni": min(1.0, p * n) if p == p else p,
                "irr": safe_exp(b), "ci_low": safe_exp(b - Z_95 * s),
                "ci_high": safe_exp(b + Z_95 * s), "alpha": float(f.alpha),
                "converged": bool(f.converged), "poisson_limit": bool(f.poisson_limit),
                "n_obs": f.n_obs, "log_likelihood": float(f.log_likelihood),
            })
    return rows


def write_fits(path, results):
    _write_rows(path, FITS_HEADER, [r for res in results for r in fit_rows(res)])


WINDOWS_HEADER = ["day_group", "factor", "start_minute", "end_minute", "start", "end",
                  "length_min", "max_irr", "minute_of_max", "time_of_max", "direction"]


def write_windows(path, grouped_windows):
    """``grouped_windows``: iterable of ``(day_group, [EffectWindow, ...])``."""
    rows = []
    for group, windows in grouped_windows:
        for w in windows:
            rows.append({"day_group": group, "factor": w.factor, "start_minute": w.start_minute,
                         "end_minute": w.end_minute, "start": format_minute(w.start_minute),
                         "end": format_minute(w.end_minute), "length_min": w.length,
                         "max_irr": w.max_irr, "minute_of_max": w.minute_of_max,
                         "time_of_max": format_minute(w.minute_of_max),
                         "direction": w.direction})
    _write_rows(path, WINDOWS_HEADER, rows)


CORRELATIONS_HEADER = ["day_group", "window", "minute", "time", "r", "p", "n_zones"]


def write_correlations(path, rows):
    _write_rows(path, CORRELATIONS_HEADER, rows)


IRR_HEADER = ["minute", "time", "factor", "irr", "ci_low", "ci_high", "p", "p_bonferroni",
              "alpha", "ci_excludes_1", "significant", "converged"]


def write_irr_series(path, rows, with_group=False):
    _write_rows(path, (["day_group"] if with_group else []) + IRR_HEADER, rows)


def write_geojson(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=False)
        fh.write("\n")


def analyse(profiles, zones, calendar, grid, model="full", groups=("all",), jobs=1,
            alpha_sig=0.05, factor="pogo"):
    """Sweep plus post-analysis for each day group.

    Returns a dict with ``sweeps``, ``windows``, ``correlations`` and
    ``choropleths`` (a list of ``(group, minute, FeatureCollection)``).
    """
    sweeps, windows, correlations, maps = [], [], [], []
    for group in groups:
        res = run_sweep(profiles, zones, calendar, grid, model, group, jobs)
        sweeps.append(res)
        ws = extract_windows(res.fits, factor, alpha_sig, grid.step)
        windows.append((res.day_group, ws))
        diff_groups = DAY_GROUPS if group in (None, "all") else (group,)
        for dg in diff_groups:
            try:
                diff = zone_differences(profiles, zones, calendar, dg)
            except AnalysisError as exc:
                res.warnings.append(str(exc))
                continue
            for w in ws:
                diffs = differences_at(diff, zones, grid, dg, w.minute_of_max)
                try:
                    r, p = pokepoint_correlation(diffs, zones)
                except AnalysisError as exc:
                    r, p = float("nan"), float("nan")
                    res.warnings.append(f"{dg} {w.label()}: {exc}")
                correlations.append({"day_group": dg, "window": w.label(),
                                     "minute": w.minute_of_max,
                                     "time": format_minute(w.minute_of_max),
                                     "r": r, "p": p, "n_zones": len(zones)})
                maps.append((dg, w.minute_of_max, export_choropleth(diffs, zones)))
    return {"sweeps": sweeps, "windows": windows, "correlations": correlations,
            "choropleths": maps}
