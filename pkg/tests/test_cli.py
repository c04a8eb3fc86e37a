import csv
import hashlib
import os
import shutil
import subprocess
import sys

import pytest

from floatpop import cli
from floatpop.devices import RULES

SCENARIO = """\
seed = 21
n_zones = 6
devices = 60
days_each_side = 5
towers_per_zone = 1,2
effects = business 11:58-12:46 1.5
"""


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def source(tmp_path_factory):
    root = tmp_path_factory.mktemp("src")
    (root / "s.txt").write_text(SCENARIO)
    assert cli.main(["synth", str(root / "s.txt"), "--out", str(root / "data")]) == 0
    return root / "data"


@pytest.fixture
def data(source, tmp_path):
    """A private copy of the synthetic dataset."""
    return shutil.copytree(source, tmp_path / "data")


def read_report(out):
    with open(out / "device_filter_report.csv", newline="") as fh:
        rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
    return {item: int(count) for item, count in rows[1:]}


def run(*args):
    return cli.main([str(a) for a in args])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "floatpop", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("floatpop ")


def test_missing_zones_file(data, tmp_path, capsys):
    (data / "zones.geojson").unlink()
    assert run("ingest", "--config", data / "study.cfg", "--out", tmp_path / "o") == 2
    assert str(data / "zones.geojson") in capsys.readouterr().err


def test_malformed_scenario(tmp_path, capsys):
    (tmp_path / "s.txt").write_text("devices = many\n")
    assert run("synth", tmp_path / "s.txt", "--out", tmp_path / "d") == 2
    assert "error:" in capsys.readouterr().err


def test_stage_order_enforced(data, tmp_path):
    cfg, out = data / "study.cfg", tmp_path / "o"
    assert run("profiles", "--config", cfg, "--out", out) == 3
    assert run("ingest", "--config", cfg, "--out", out) == 0
    assert run("sweep", "--config", cfg, "--out", out) == 3


def test_stale_cache_detected(data, tmp_path):
    cfg, out = data / "study.cfg", tmp_path / "o"
    assert run("ingest", "--config", cfg, "--out", out) == 0
    assert run("profiles", "--config", cfg, "--out", out) == 0
    with open(data / "towers.csv", "a") as fh:
        fh.write("T999_1,0.0,0.0\n")
    assert run("profiles", "--config", cfg, "--out", out) == 3
    assert run("sweep", "--config", cfg, "--out", out) == 3


def test_edited_profiles_detected(data, tmp_path):
    cfg, out = data / "study.cfg", tmp_path / "o"
    assert run("ingest", "--config", cfg, "--out", out) == 0
    assert run("profiles", "--config", cfg, "--out", out) == 0
    with open(out / "profiles.csv", "a") as fh:
        fh.write("\n")
    assert run("sweep", "--config", cfg, "--out", out) == 3


def test_valid_dataset_drops_nothing(data, tmp_path):
    out = tmp_path / "o"
    assert run("ingest", "--config", data / "study.cfg", "--out", out) == 0
    report = read_report(out)
    assert all(report[rule] == 0 for rule in RULES)
    assert report["input_devices"] == report["kept_devices"] == 60
    kept = (out / "cache" / "kept_devices.txt").read_text().split()
    assert len(kept) == 60


def test_missing_device_day_dropped_by_activity_rule(data, tmp_path):
    events = data / "events.csv"
    lines = events.read_text().splitlines(keepends=True)
    victim = lines[1].split(",")[1]
    day = "2016-08-04"
    kept_lines = [ln for ln in lines
                  if not (ln.startswith(day) and ln.split(",")[1] == victim)]
    assert len(kept_lines) < len(lines)
    events.write_text("".join(kept_lines))
    out = tmp_path / "o"
    assert run("ingest", "--config", data / "study.cfg", "--out", out) == 0
    report = read_report(out)
    assert report["ii_not_active_every_day"] == 1
    assert sum(report[rule] for rule in RULES) == 1
    assert victim not in (out / "cache" / "kept_devices.txt").read_text().split()


def test_rerun_is_idempotent(data, tmp_path):
    cfg, out = data / "study.cfg", tmp_path / "o"
    for cmd in ("ingest", "profiles", "sweep"):
        assert run(cmd, "--config", cfg, "--out", out) == 0
    first = {p.name: sha(p) for p in out.glob("*.csv")}
    for cmd in ("ingest", "profiles", "sweep"):
        assert run(cmd, "--config", cfg, "--out", out) == 0
    assert {p.name: sha(p) for p in out.glob("*.csv")} == first


def test_sweep_outputs_and_modes(data, tmp_path, capsys):
    cfg, out = data / "study.cfg", tmp_path / "o"
    for cmd in ("ingest", "profiles"):
        assert run(cmd, "--config", cfg, "--out", out) == 0
    assert run("sweep", "--config", cfg, "--out", out, "--day-group", "split") == 0
    fits = (out / "fits.csv").read_text().splitlines()
    groups = {row.split(",")[0] for row in fits[1:]}
    assert groups == {"business", "weekend"}
    assert (out / "sweep_manifest.json").is_file()
    assert "significant pogo windows" in capsys.readouterr().out
    for p in out.glob("*.csv"):
        assert p.stat().st_mode & 0o777 == 0o666 & ~current_umask()


def current_umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def test_bad_sig_level(data, tmp_path):
    cfg, out = data / "study.cfg", tmp_path / "o"
    for cmd in ("ingest", "profiles"):
        assert run(cmd, "--config", cfg, "--out", out) == 0
    assert run("sweep", "--config", cfg, "--out", out, "--sig-level", "1.5") == 2
