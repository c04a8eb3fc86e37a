import datetime as dt
import json

import numpy as np
import pytest
from conftest import box, make_zone
from hypothesis import given, settings
from hypothesis import strategies as st

from floatpop.ingest import (
    IngestError,
    StudyConfig,
    Vocabulary,
    attach_pokepoints,
    iter_event_batches,
    parse_events,
    read_config,
    read_pois,
    read_towers,
    read_zones,
    select_zones,
    write_config,
)
from floatpop.model import GeometryError, StudyCalendar, TimeGrid, Tower

HEADER = "timestamp,device_id,tower_id,kib,category\n"


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestParseEvents:
    def test_row_maps_fields(self, tmp_path):
        p = write(tmp_path / "e.csv", HEADER + "2016-07-27T08:15,abc,T1,12.5,prepaid\n")
        events, report = parse_events(p)
        (ev,) = list(events)
        assert (ev.date, ev.minute, ev.device_id, ev.tower_id) == (
            dt.date(2016, 7, 27), 495, "abc", "T1")
        assert ev.kib_downloaded == 12.5 and ev.device_category == "prepaid"
        assert report.accepted == 1 and report.total_rejected == 0

    def test_negative_kib_skipped(self, tmp_path):
        p = write(tmp_path / "e.csv", HEADER + "2016-07-27T08:15,abc,T1,-1,prepaid\n"
                  "2016-07-27T08:16,abc,T1,1,prepaid\n")
        events, report = parse_events(p)
        assert len(list(events)) == 1
        assert report.rejected == {"negative_kib": 1}

    def test_empty_file_with_header(self, tmp_path):
        events, report = parse_events(write(tmp_path / "e.csv", HEADER))
        assert list(events) == []
        assert report.total_rejected == 0 and report.rows_read == 0

    def test_malformed_rows_counted_not_fatal(self, tmp_path):
        rows = ["2016-07-27T25:00,a,T1,1,x", "not-a-date,a,T1,1,x", "2016-07-27T08:00,,T1,1,x",
                "2016-07-27T08:00,a,T1,abc,x", "2016-07-27T08:00,a,T1", "2016-07-27T08:00,a,T1,nan,x"]
        events, report = parse_events(write(tmp_path / "e.csv", HEADER + "\n".join(rows) + "\n"))
        assert list(events) == []
        assert report.rejected == {"bad_timestamp": 2, "empty_device_id": 1, "bad_kib": 2,
                                   "bad_field_count": 1}

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError, match="missing file"):
            parse_events(tmp_path / "nope.csv")

    def test_missing_header(self, tmp_path):
        p = write(tmp_path / "e.csv", "2016-07-27T08:15,abc,T1,12.5,prepaid\n")
        with pytest.raises(IngestError, match="header"):
            parse_events(p)

    def test_unknown_tower_counted(self, tmp_path):
        p = write(tmp_path / "e.csv", HEADER + "2016-07-27T08:15,a,T1,1,x\n"
                  "2016-07-27T08:15,a,T9,1,x\n")
        from floatpop.ingest import RejectionReport
        rep = RejectionReport()
        batches = list(iter_event_batches(p, [Tower("T1", 0, 0)], Vocabulary(), Vocabulary(), rep))
        assert sum(len(b) for b in batches) == 1
        assert rep.rejected["unknown_tower"] == 1 and rep.accepted == 1

    def test_batches_split_and_preserve_order(self, tmp_path):
        lines = [f"2016-07-27T08:{m:02d},d{m % 3},T1,{m},x" for m in range(50)]
        p = write(tmp_path / "e.csv", HEADER + "\n".join(lines) + "\n")
        batches = list(iter_event_batches(p, [Tower("T1", 0, 0)], Vocabulary(), Vocabulary(),
                                          batch_size=7))
        assert [len(b) for b in batches] == [7] * 7 + [1]
        assert np.concatenate([b.minute for b in batches]).tolist() == [480 + m for m in range(50)]


def _zone_with(zone_id, x0, area, pokepoints):
    return make_zone(zone_id, box(x0, 0, x0 + 1, 1), area=area, pokepoints=pokepoints)


class TestSelectZones:
    def test_largest_reference_zone_kept(self):
        z = _zone_with("Z", 0, 18.37, 3)
        towers = [Tower("t1", 0.2, 0.5), Tower("t2", 0.8, 0.5)]
        assert select_zones([z], towers) == [z]

    def test_oversized_zone_dropped(self):
        assert select_zones([_zone_with("Z", 0, 25.0, 3)], [Tower("t", 0.5, 0.5)]) == []

    def test_zone_without_towers_dropped(self):
        assert select_zones([_zone_with("Z", 0, 1.0, 3)], [Tower("t", 5.0, 0.5)]) == []

    def test_zone_without_pokepoints_dropped(self):
        assert select_zones([_zone_with("Z", 0, 1.0, 0)], [Tower("t", 0.5, 0.5)]) == []

    def test_threshold_is_strict(self):
        assert select_zones([_zone_with("Z", 0, 20.0, 1)], [Tower("t", 0.5, 0.5)]) == []

    def test_result_sorted_by_zone_id(self):
        zones = [_zone_with("C", 0, 1, 1), _zone_with("A", 2, 1, 1), _zone_with("B", 4, 1, 1)]
        towers = [Tower(f"t{k}", 0.5 + 2 * k, 0.5) for k in range(3)]
        assert [z.zone_id for z in select_zones(zones, towers)] == ["A", "B", "C"]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.1, 30), st.integers(0, 3), st.booleans()),
                    min_size=1, max_size=8))
    def test_idempotent(self, spec):
        zones, towers = [], []
        for k, (area, pp, has_tower) in enumerate(spec):
            zones.append(_zone_with(f"Z{k}", 2 * k, area, pp))
            if has_tower:
                towers.append(Tower(f"t{k}", 2 * k + 0.5, 0.5))
        once = select_zones(zones, towers)
        assert select_zones(once, towers) == once


class TestAttachPokepoints:
    def test_counts_inside(self, two_boxes):
        pois = [(0.2, 0.2), (0.5, 0.5), (0.7, 0.1), (5.0, 5.0)]
        a, b = attach_pokepoints(two_boxes, pois)
        assert (a.pokepoint_count, b.pokepoint_count) == (3, 0)

    def test_no_pois(self, two_boxes):
        assert [z.pokepoint_count for z in attach_pokepoints(two_boxes, [])] == [0, 0]

    def test_boundary_poi_counted_once_in_first_zone(self, two_boxes):
        a, b = attach_pokepoints(two_boxes, [(1.0, 0.5)])
        assert (a.pokepoint_count, b.pokepoint_count) == (1, 0)
        b2, a2 = attach_pokepoints(two_boxes[::-1], [(1.0, 0.5)])
        assert (a2.pokepoint_count, b2.pokepoint_count) == (0, 1)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([-0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5]),
                              st.sampled_from([-0.5, 0.0, 0.5, 1.0, 1.5])), max_size=30))
    def test_never_double_counts(self, pois):
        from floatpop.model import point_in_zone
        zones = [make_zone("A", box(0, 0, 1, 1)), make_zone("B", box(1, 0, 2, 1))]
        counted = attach_pokepoints(zones, pois)
        assert sum(z.pokepoint_count for z in counted) <= len(pois)
        for z in counted:
            assert z.pokepoint_count == sum(point_in_zone(x, y, zones) == z.zone_id
                                            for x, y in pois)


def _feature(zone_id, ring, land_use="residential", area=1.0):
    return {"type": "Feature",
            "properties": {"zone_id": zone_id, "land_use": land_use, "area_km2": area},
            "geometry": {"type": "Polygon", "coordinates": [[list(p) for p in ring]]}}


class TestStaticFiles:
    def test_read_zones_keeps_geometry(self, tmp_path):
        doc = {"type": "FeatureCollection", "features": [_feature("A", box(0, 0, 1, 1))]}
        p = write(tmp_path / "z.geojson", json.dumps(doc))
        (z,) = read_zones(p)
        assert z.zone_id == "A" and z.geometry == doc["features"][0]["geometry"]

    def test_read_zones_rejects_overlap(self, tmp_path):
        doc = {"type": "FeatureCollection",
               "features": [_feature("A", box(0, 0, 2, 2)), _feature("B", box(1, 1, 3, 3))]}
        with pytest.raises(GeometryError):
            read_zones(write(tmp_path / "z.geojson", json.dumps(doc)))

    def test_read_zones_bad_land_use(self, tmp_path):
        doc = {"type": "FeatureCollection",
               "features": [_feature("A", box(0, 0, 1, 1), land_use="farm")]}
        with pytest.raises(IngestError, match="land_use"):
            read_zones(write(tmp_path / "z.geojson", json.dumps(doc)))

    def test_read_towers_duplicate(self, tmp_path):
        p = write(tmp_path / "t.csv", "tower_id,lon,lat\nT1,0,0\nT1,1,1\n")
        with pytest.raises(IngestError, match="duplicate"):
            read_towers(p)

    def test_read_pois_ignores_kind(self, tmp_path):
        p = write(tmp_path / "p.csv", "lon,lat,kind\n0.5,0.5,stop\n1.5,0.5,gym\n")
        assert read_pois(p).tolist() == [[0.5, 0.5], [1.5, 0.5]]


class TestConfig:
    def test_round_trip(self, tmp_path, launch):
        cfg = StudyConfig(StudyCalendar.around_launch(launch, 3), TimeGrid(420, 1200), launch,
                          15.0, 20, ("prepaid", "postpaid"), 3.0, 400.0)
        write_config(cfg, tmp_path / "study.cfg")
        back = read_config(tmp_path / "study.cfg")
        for key in ("calendar", "grid", "launch_date", "max_zone_area_km2",
                    "lowess_bandwidth_min", "category_allowlist", "min_mib", "max_mib"):
            assert getattr(back, key) == getattr(cfg, key), key
        assert back.path("events") == tmp_path / "events.csv"

    def test_launch_date_only(self, tmp_path):
        p = write(tmp_path / "c.cfg", "launch_date = 2016-08-03  # opening day\n")
        cfg = read_config(p)
        assert len(cfg.calendar.study_dates) == 14
        assert cfg.grid == TimeGrid() and cfg.category_allowlist is None

    def test_date_ranges(self, tmp_path):
        p = write(tmp_path / "c.cfg", "pre_dates = 2016-07-27..2016-07-29\n"
                  "post_dates = 2016-08-04, 2016-08-05\n")
        cfg = read_config(p)
        assert len(cfg.calendar.pre_dates) == 3 and len(cfg.calendar.post_dates) == 2

    def test_missing_calendar(self, tmp_path):
        with pytest.raises(IngestError):
            read_config(write(tmp_path / "c.cfg", "grid_start = 06:00\n"))

    def test_bad_line(self, tmp_path):
        with pytest.raises(IngestError, match="key = value"):
            read_config(write(tmp_path / "c.cfg", "launch_date 2016-08-03\n"))
