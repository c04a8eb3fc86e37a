"""End-to-end acceptance checks on synthetic cities.

Each test prints one PASS/FAIL line (also collected in the terminal
summary).  The heavy simulations are shared through module fixtures; the
whole file takes about 15 minutes on one core.
"""

import dataclasses
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from oracles import grid_search_mle, lowess_reference, random_problem

from floatpop import experiment, pipeline, synth
from floatpop.glm.fit import DesignMatrix, fit_negbin, fit_poisson, score_vector
from floatpop.model import TimeGrid
from floatpop.smoothing import lowess_smooth

GROUPS = ("business", "weekend")
INJECTED = "business 11:58-12:46 1.138; weekend 21:24-22:12 1.096"
RECOVERY_SEEDS = range(5)
NULL_SEEDS = range(100, 110)
CORRELATION_SEEDS = range(3)
EDGE_TOLERANCE_MIN = 15

pytestmark = pytest.mark.acceptance

conservation_errors = []


def simulate(scenario):
    city = synth.build_city(scenario)
    res = pipeline.run_batches(synth.simulate(city), city.towers, city.zones, city.calendar,
                               city.grid, flush_each_batch=True)
    mapped = res.tower_zone >= 0
    towers = res.smoothed[mapped].sum(axis=0)
    zones = res.profiles.values.sum(axis=0)
    scale = np.maximum(np.abs(towers), 1e-300)
    conservation_errors.append(float(np.max(np.abs(zones - towers) / scale)))
    return city, res


def longest_two(windows_by_group):
    ranked = sorted(((g, w) for g, ws in windows_by_group.items() for w in ws),
                    key=lambda gw: (-gw[1].length, gw[1].start_minute))
    return {(g, m) for g, w in ranked[:2] for m in range(w.start_minute, w.end_minute + 1)}


@pytest.fixture(scope="module")
def recovery_runs():
    """Per seed: full- and minimal-model windows for both day groups."""
    runs = []
    for seed in RECOVERY_SEEDS:
        started = time.perf_counter()
        scenario = synth.SynthScenario(seed=seed, effects=synth.parse_effects(INJECTED))
        city, res = simulate(scenario)
        truth = synth.ground_truth(scenario)
        run = {"seed": seed, "city": city, "truth": truth, "windows": {}}
        for model in ("full", "minimal"):
            run["windows"][model] = {
                g: experiment.extract_windows(
                    experiment.run_sweep(res.profiles, city.zones, city.calendar, model=model,
                                         day_group=g).fits, "pogo")
                for g in GROUPS}
        run["seconds"] = time.perf_counter() - started
        if seed == RECOVERY_SEEDS[0]:
            run["profiles"] = res.profiles
        runs.append(run)
    return runs


@pytest.fixture(scope="module")
def null_runs():
    rates = {g: [] for g in GROUPS + ("all",)}
    for seed in NULL_SEEDS:
        city, res = simulate(synth.SynthScenario(seed=seed))
        for g in rates:
            sweep = experiment.run_sweep(res.profiles, city.zones, city.calendar, day_group=g)
            rates[g].append(float(np.nanmean(sweep.series("pogo", "p") < 0.05)))
    return rates


@pytest.fixture(scope="module")
def correlation_runs():
    out = []
    for seed in CORRELATION_SEEDS:
        scenario = synth.SynthScenario(
            seed=seed, n_zones=30, devices=10000, land_use_mix=(1.0, 0.0, 0.0),
            pokepoint_attraction=0.0,
            effects=synth.parse_effects("business 11:58-12:46 1.5 pokepoint_scaled"))
        city, res = simulate(scenario)
        sweep = experiment.run_sweep(res.profiles, city.zones, city.calendar,
                                     day_group="business")
        windows = experiment.extract_windows(sweep.fits, "pogo")
        strongest = max(windows, key=lambda w: abs(math.log(w.max_irr)))
        diff = experiment.zone_differences(res.profiles, city.zones, city.calendar, "business")
        at_max = experiment.differences_at(diff, city.zones, city.grid, "business",
                                           strongest.minute_of_max)
        r, _ = experiment.pokepoint_correlation(at_max, city.zones)
        out.append((seed, strongest.minute_of_max, r))
    return out


def test_effect_recovery(recovery_runs, acceptance):
    ok, parts = True, []
    for g in GROUPS:
        jaccards, peaks = [], []
        for run in recovery_runs:
            injected = run["truth"].injected_minutes(g)
            near = synth.dilate(injected, EDGE_TOLERANCE_MIN, run["city"].grid)
            touching = [w for w in run["windows"]["full"][g]
                        if any(m in near for m in range(w.start_minute, w.end_minute + 1))]
            jaccards.append(synth.tolerant_jaccard(synth.window_minutes(touching), injected,
                                                   EDGE_TOLERANCE_MIN, run["city"].grid))
            peaks.append(max((w.max_irr for w in touching), default=float("nan")))
        target = run["truth"].windows[g][0][2]
        mean_j, mean_peak = float(np.mean(jaccards)), float(np.mean(peaks))
        ok &= mean_j >= 0.6 and abs(mean_peak - target) <= 0.04
        parts.append(f"{g} mean Jaccard {mean_j:.3f} (min {min(jaccards):.3f}), "
                     f"mean max IRR {mean_peak:.4f} vs {target}")
    secs = np.mean([r["seconds"] for r in recovery_runs])
    parts.append(f"{secs:.0f} s per seed on {os.cpu_count() or 1} core(s)")
    assert acceptance(1, ok, "; ".join(parts))


def test_null_calibration(null_runs, acceptance):
    means = {g: float(np.mean(v)) for g, v in null_runs.items()}
    ok = all(0.02 <= means[g] <= 0.09 for g in means)
    detail = ", ".join(f"{g} {means[g]:.4f}" for g in means)
    assert acceptance(2, ok, f"rejection rate over {len(NULL_SEEDS)} seeds: {detail}")


def test_glm_oracle_equivalence(acceptance):
    worst_beta = worst_alpha = worst_grad = 0.0
    for seed in range(100):
        X, y, off = random_problem(seed)
        names = tuple(f"c{k}" for k in range(X.shape[1]))
        design = DesignMatrix(names, X, off, y)
        nb = fit_negbin(design)
        beta, alpha = grid_search_mle(y, X, off)
        worst_beta = max(worst_beta, float(np.max(np.abs(nb.beta - beta))))
        worst_alpha = max(worst_alpha, abs(nb.alpha - alpha))
        pois = fit_poisson(design)
        worst_grad = max(worst_grad, float(np.max(np.abs(score_vector(design, pois)))))
    ok = worst_beta <= 1e-3 and worst_alpha <= 1e-3 and worst_grad < 1e-6
    assert acceptance(3, ok, f"100 designs, max |dbeta| {worst_beta:.2e}, "
                             f"max |dalpha| {worst_alpha:.2e}, max Poisson gradient "
                             f"{worst_grad:.2e}")


def test_exposure_invariance(recovery_runs, acceptance):
    run = recovery_runs[0]
    city, profiles = run["city"], run["profiles"]
    grid = TimeGrid(740, 741)
    scaled = [dataclasses.replace(z, area_km2=4.0 * z.area_km2) for z in city.zones]
    a = experiment.run_sweep(profiles, city.zones, city.calendar, grid, day_group="all").fits[0]
    b = experiment.run_sweep(profiles, scaled, city.calendar, grid, day_group="all").fits[0]
    assert a.minute == b.minute == 740
    shift = b.beta[0] - a.beta[0] + math.log(4.0)
    others = float(np.max(np.abs(b.beta[1:] - a.beta[1:])))
    d_alpha = abs(b.alpha - a.alpha)
    ok = a.converged and b.converged and abs(shift) <= 1e-6 and others <= 1e-6 \
        and d_alpha <= 1e-6
    assert acceptance(4, ok, f"intercept shift error {shift:.2e}, other coefficients "
                             f"{others:.2e}, alpha {d_alpha:.2e} at 12:20")


def test_lowess_oracle(acceptance):
    rng = np.random.default_rng(2016)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(40, 200))
        y = rng.poisson(rng.uniform(1, 50), n).astype(float)
        worst = max(worst, float(np.max(np.abs(lowess_smooth(y, 30) - lowess_reference(y, 30)))))
    t = np.arange(300, dtype=float)
    const = float(np.max(np.abs(lowess_smooth(np.full(300, 7.25), 30) - 7.25)))
    line = 3.0 + 0.5 * t
    linear = float(np.max(np.abs(lowess_smooth(line, 30) - line)))
    ok = worst <= 1e-6 and const <= 1e-9 and linear <= 1e-9
    assert acceptance(5, ok, f"50 series max error {worst:.2e}, constant {const:.2e}, "
                             f"linear {linear:.2e}")


def test_conservation(recovery_runs, null_runs, correlation_runs, acceptance):
    worst = max(conservation_errors)
    ok = worst <= 1e-9
    assert acceptance(6, ok, f"{len(conservation_errors)} datasets, max relative error "
                             f"{worst:.2e}")


def test_correlation_recovery(correlation_runs, acceptance):
    ok = all(r > 0.8 for _, _, r in correlation_runs)
    detail = ", ".join(f"seed {s} r={r:.3f} at {m // 60}:{m % 60:02d}"
                       for s, m, r in correlation_runs)
    assert acceptance(7, ok, detail)


def test_robust_model_agreement(recovery_runs, acceptance):
    scores = []
    for run in recovery_runs:
        full = longest_two(run["windows"]["full"])
        minimal = longest_two(run["windows"]["minimal"])
        scores.append(len(full & minimal) / len(full | minimal) if full | minimal else 0.0)
    ok = min(scores) >= 0.5
    assert acceptance(8, ok, "Jaccard per seed " + ", ".join(f"{s:.3f}" for s in scores))


def test_determinism_across_jobs(tmp_path, acceptance):
    scenario = tmp_path / "scenario.txt"
    scenario.write_text("seed = 8\nn_zones = 12\ndevices = 600\ndays_each_side = 7\n"
                        f"effects = {INJECTED.replace('1.138', '1.4').replace('1.096', '1.4')}\n")
    outputs = []
    for jobs in (1, 2):
        root = tmp_path / f"run{jobs}"
        cfg = root / "data" / "study.cfg"
        steps = [["synth", str(scenario), "--out", str(root / "data")],
                 ["ingest", "--config", str(cfg), "--out", str(root / "out")],
                 ["profiles", "--config", str(cfg), "--out", str(root / "out")],
                 ["sweep", "--config", str(cfg), "--out", str(root / "out"), "--jobs",
                  str(jobs), "--day-group", "split"]]
        for step in steps:
            subprocess.run([sys.executable, "-m", "floatpop", *step], check=True,
                           capture_output=True)
        out = root / "out"
        files = ["fits.csv", "windows.csv"] + sorted(p.name for p in out.glob("*.geojson"))
        outputs.append({name: (out / name).read_bytes() for name in files})
    same = outputs[0] == outputs[1]
    n_geo = sum(name.endswith(".geojson") for name in outputs[0])
    ok = same and n_geo > 0
    assert acceptance(9, ok, f"jobs 1 vs 2: fits.csv, windows.csv and {n_geo} GeoJSON files "
                             f"{'identical' if same else 'differ'}")
