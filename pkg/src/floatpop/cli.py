"""Command-line interface: ``floatpop {synth,ingest,profiles,sweep}``.

Exit codes: 0 success, 2 input error, 3 pipeline-state error (missing or
stale cache), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .experiment import (AnalysisError, analyse, irr_timeseries_report, write_correlations,
                         write_fits, write_geojson, write_irr_series, write_windows)
from .glm.design import MODELS
from .glm.fit import GLMError
from .ingest import IngestError, load_dataset, read_config, read_key_values
from .model import GeometryError
from .synth import ScenarioError, generate, read_scenario

log = logging.getLogger("floatpop")

EXIT_OK, EXIT_INPUT, EXIT_STATE, EXIT_NUMERIC = 0, 2, 3, 4
DAY_GROUP_CHOICES = ("all", "business", "weekend", "split")
CONVENTIONS = {
    "response_rounding": "smoothed zone values rounded to nearest integer, ties to even",
    "alpha_estimation": "profile likelihood over ln(alpha) in [ln 1e-8, ln 1e4], "
                        "bounded Brent search, joint Newton polish",
    "alpha_lower_bound": "fits at the lower bound report alpha = 0 with poisson_limit = true",
    "standard_errors": "observed information",
    "traffic_basis": "daily MiB totals over grid-filtered events",
    "tower_on_boundary": "first matching zone in input order",
}


def _umask_mode():
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


class StateError(Exception):
    """Missing or stale intermediate results."""


# ---------------------------------------------------------------------------
# files

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, _umask_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_output(path, writer):
    """Run ``writer(tmp_path)`` and move the result to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.chmod(tmp, _umask_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


class RunManifest:
    """Config snapshot, input digests, version, per-stage timings and warnings."""

    def __init__(self, command, config_path=None):
        self.doc = {"tool": "floatpop", "version": __version__, "command": command,
                    "config": {}, "inputs": {}, "timings_s": {}, "warnings": [],
                    "outputs": [], "conventions": CONVENTIONS}
        if config_path is not None:
            self.doc["config"] = read_key_values(config_path)
        self._t = time.perf_counter()

    def digest(self, path):
        self.doc["inputs"][str(path)] = sha256_file(path)

    def stage(self, name):
        now = time.perf_counter()
        self.doc["timings_s"][name] = round(now - self._t, 3)
        self._t = now

    def warn(self, msg):
        log.warning(msg)
        self.doc["warnings"].append(msg)

    def output(self, path):
        self.doc["outputs"].append(str(path))

    def write(self, path):
        write_json(path, self.doc)


def input_digests(cfg, config_path):
    paths = {"config": Path(config_path)}
    for key in ("events", "towers", "zones", "pois"):
        paths[key] = cfg.path(key)
    for p in paths.values():
        if not p.is_file():
            raise IngestError(f"missing file: {p}")
    return {k: sha256_file(p) for k, p in paths.items()}


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    scenario = read_scenario(args.scenario)
    out = Path(args.out)
    manifest = RunManifest("synth", args.scenario)
    manifest.digest(args.scenario)
    city = generate(scenario, out)
    manifest.stage("generate")
    for name in ("events.csv", "towers.csv", "zones.geojson", "pois.csv", "study.cfg"):
        manifest.output(out / name)
    manifest.write(out / "synth_manifest.json")
    print(f"wrote {len(city.zones)} zones, {len(city.towers)} towers, "
          f"{len(city.home)} devices to {out}")
    return EXIT_OK


def _cache_dir(out):
    return Path(out) / "cache"


def cmd_ingest(args):
    from .pipeline import select_from_batches
    from .ingest import RejectionReport, Vocabulary, iter_event_batches

    cfg = read_config(args.config)
    out, cache = Path(args.out), _cache_dir(args.out)
    digests = input_digests(cfg, args.config)
    state_path = cache / "ingest.json"
    if not args.force and state_path.is_file() and read_json(state_path).get("inputs") == digests:
        print(f"ingest cache up to date: {cache}")
        return EXIT_OK

    manifest = RunManifest("ingest", args.config)
    for p in [args.config] + [cfg.path(k) for k in ("events", "towers", "zones", "pois")]:
        manifest.digest(p)
    dataset = load_dataset(cfg)
    manifest.stage("load_static_inputs")
    devices, categories = Vocabulary(), Vocabulary()
    rejections = RejectionReport()

    def batches():
        return iter_event_batches(dataset.events_path, dataset.towers, devices, categories,
                                  rejections)

    kept, report, _ = select_from_batches(batches, dataset.towers, dataset.zones,
                                          dataset.calendar, dataset.grid, cfg.min_mib,
                                          cfg.max_mib, cfg.category_allowlist, categories.items)
    manifest.stage("device_filter")
    kept_ids = sorted(devices.items[i] for i in range(len(kept)) if kept[i])
    atomic_write_text(cache / "kept_devices.txt", "".join(f"{d}\n" for d in kept_ids))
    atomic_write_text(out / "device_filter_report.csv", report.to_csv())
    atomic_write_text(out / "device_filter_summary.txt", report.summary() + "\n")
    rej_lines = ["reason,count"] + [f"{k},{v}" for k, v in sorted(rejections.rejected.items())]
    atomic_write_text(out / "rejections.csv", "\n".join(rej_lines) + "\n")
    if rejections.total_rejected:
        manifest.warn(f"{rejections.total_rejected} event rows rejected")
    write_json(state_path, {"inputs": digests, "zones": [z.zone_id for z in dataset.zones],
                            "kept_devices": len(kept_ids)})
    for name in ("device_filter_report.csv", "device_filter_summary.txt", "rejections.csv"):
        manifest.output(out / name)
    manifest.write(out / "ingest_manifest.json")
    print(report.summary())
    return EXIT_OK


def _check_ingest_state(cfg, config_path, out):
    state_path = _cache_dir(out) / "ingest.json"
    if not state_path.is_file():
        raise StateError(f"no ingest cache at {state_path}; run 'floatpop ingest' first")
    if read_json(state_path).get("inputs") != input_digests(cfg, config_path):
        raise StateError(f"stale ingest cache at {state_path}: inputs changed since ingest")
    return read_json(state_path)


def cmd_profiles(args):
    from .aggregation import write_profiles
    from .pipeline import run_dataset
    from .smoothing import write_debug_dump

    cfg = read_config(args.config)
    out = Path(args.out)
    _check_ingest_state(cfg, args.config, out)
    kept_path = _cache_dir(out) / "kept_devices.txt"
    kept_digest = sha256_file(kept_path)
    state_path = _cache_dir(out) / "profiles.json"
    profiles_path = out / "profiles.csv"
    if (not args.force and state_path.is_file() and profiles_path.is_file()
            and read_json(state_path).get("kept_devices") == kept_digest
            and read_json(state_path).get("profiles") == sha256_file(profiles_path)):
        print(f"profiles up to date: {profiles_path}")
        return EXIT_OK

    manifest = RunManifest("profiles", args.config)
    manifest.digest(args.config)
    manifest.digest(cfg.path("events"))
    manifest.digest(kept_path)
    dataset = load_dataset(cfg)
    kept = set(kept_path.read_text(encoding="utf-8").split())
    result = run_dataset(dataset, kept=kept)
    manifest.stage("count_smooth_aggregate")
    atomic_output(profiles_path, lambda p: write_profiles(p, result.profiles))
    manifest.output(profiles_path)
    if args.debug_dump:
        dump = out / "tower_series_debug.csv"
        atomic_output(dump, lambda p: write_debug_dump(
            p, [t.tower_id for t in result.towers], result.calendar.study_dates,
            result.grid, result.raw_counts, result.smoothed))
        manifest.output(dump)
    manifest.stage("write")
    write_json(state_path, {"kept_devices": kept_digest,
                            "profiles": sha256_file(profiles_path)})
    manifest.write(out / "profiles_manifest.json")
    print(f"wrote {profiles_path} ({len(result.profiles.zone_ids)} zones x "
          f"{len(result.profiles.dates)} dates x {len(result.grid)} minutes)")
    return EXIT_OK


def cmd_sweep(args):
    from .aggregation import read_profiles

    cfg = read_config(args.config)
    out = Path(args.out)
    _check_ingest_state(cfg, args.config, out)
    state_path = _cache_dir(out) / "profiles.json"
    profiles_path = out / "profiles.csv"
    if not state_path.is_file() or not profiles_path.is_file():
        raise StateError("no profiles; run 'floatpop profiles' first")
    if read_json(state_path).get("profiles") != sha256_file(profiles_path):
        raise StateError(f"stale profiles: {profiles_path} changed since it was written")
    if not 0 < args.sig_level < 1:
        raise ValueError("--sig-level must be in (0, 1)")

    manifest = RunManifest("sweep", args.config)
    manifest.digest(args.config)
    manifest.digest(profiles_path)
    dataset = load_dataset(cfg)
    profiles = read_profiles(profiles_path, dataset.grid)
    manifest.stage("load")
    groups = ("business", "weekend") if args.day_group == "split" else (args.day_group,)
    res = analyse(profiles, dataset.zones, dataset.calendar, dataset.grid, args.model, groups,
                  args.jobs, args.sig_level)
    manifest.stage("sweep")
    for sw in res["sweeps"]:
        for w in sw.warnings:
            manifest.warn(f"{sw.day_group}: {w}")
    manifest.doc["model"] = args.model
    manifest.doc["day_groups"] = list(groups)
    manifest.doc["sig_level"] = args.sig_level
    manifest.doc["regressors"] = {sw.day_group: list(sw.names) for sw in res["sweeps"]}
    manifest.doc["nonconverged_minutes"] = {sw.day_group: sw.n_nonconverged
                                            for sw in res["sweeps"]}

    paths = {name: out / name for name in ("fits.csv", "windows.csv", "correlations.csv",
                                           "irr_series.csv")}
    atomic_output(paths["fits.csv"], lambda p: write_fits(p, res["sweeps"]))
    atomic_output(paths["windows.csv"], lambda p: write_windows(p, res["windows"]))
    atomic_output(paths["correlations.csv"],
                  lambda p: write_correlations(p, res["correlations"]))

    def irr_writer(p):
        rows = []
        for sw in res["sweeps"]:
            rows += [dict(r, day_group=sw.day_group)
                     for r in irr_timeseries_report(sw.fits, ["pogo"], args.sig_level)]
        write_irr_series(p, rows, with_group=True)

    atomic_output(paths["irr_series.csv"], irr_writer)
    for p in paths.values():
        manifest.output(p)
    for group, minute, doc in res["choropleths"]:
        p = out / f"choropleth_{group}_{minute}.geojson"
        atomic_output(p, lambda q, d=doc: write_geojson(q, d))
        manifest.output(p)
    manifest.stage("write")
    manifest.write(out / "sweep_manifest.json")
    for group, ws in res["windows"]:
        print(f"[{group}] {len(ws)} significant pogo windows")
        for w in sorted(ws, key=lambda w: -w.length)[:5]:
            print(f"  {w.label():>15}  max IRR {w.max_irr:.3f} at {w.minute_of_max // 60}:"
                  f"{w.minute_of_max % 60:02d}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="floatpop", description=(
        "Floating-population impact analysis from mobile-network event logs."))
    parser.add_argument("--version", action="version", version=f"floatpop {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a scenario file")
    p.add_argument("scenario", help="key = value scenario file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    def common(p):
        p.add_argument("--config", required=True, help="study config file")
        p.add_argument("--out", default="out", help="output/cache directory (default: out)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes, 0 = auto")
        p.add_argument("--force", action="store_true", help="recompute even if up to date")

    p = sub.add_parser("ingest", help="validate inputs and run the device filter")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("profiles", help="count, smooth and aggregate zone profiles")
    common(p)
    p.add_argument("--debug-dump", action="store_true",
                   help="also write raw and smoothed tower series")
    p.set_defaults(func=cmd_profiles)

    p = sub.add_parser("sweep", help="per-minute regressions and post-analysis")
    common(p)
    p.add_argument("--sig-level", type=float, default=0.05, help="two-sided level (0.05)")
    p.add_argument("--model", choices=MODELS, default="full")
    p.add_argument("--day-group", choices=DAY_GROUP_CHOICES, default="all",
                   help="pool all dates, one group, or split into business and weekend sweeps")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IngestError, ScenarioError, GeometryError, AnalysisError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except (GLMError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
