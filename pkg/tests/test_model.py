import datetime as dt

import numpy as np
import pytest
from conftest import box, make_zone
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import oracle_zone
from scipy.spatial import ConvexHull

from floatpop.model import (
    DayClass,
    GeometryError,
    NetworkEvent,
    StudyCalendar,
    TimeGrid,
    Tower,
    ZoneRecord,
    check_non_overlapping,
    classify_day,
    format_minute,
    locate_points,
    parse_minute,
    point_in_zone,
    polygon_area_km2,
    square_ring,
    validate_polygon,
)


class TestClassifyDay:
    def test_saturday(self):
        assert classify_day(dt.date(2016, 8, 6)) is DayClass.SATURDAY

    def test_business_day(self):
        assert classify_day(dt.date(2016, 8, 1)) is DayClass.BUSINESS_DAY

    def test_sunday(self):
        assert classify_day(dt.date(2016, 8, 7)) is DayClass.SUNDAY

    @given(st.dates())
    def test_pure_function_of_date(self, d):
        assert classify_day(d) is classify_day(dt.date(d.year, d.month, d.day))
        expected = {5: DayClass.SATURDAY, 6: DayClass.SUNDAY}.get(d.weekday(),
                                                                   DayClass.BUSINESS_DAY)
        assert classify_day(d) is expected


class TestPointInZone:
    def test_centroid_of_unit_square(self, two_boxes):
        assert point_in_zone(0.5, 0.5, two_boxes) == "A"

    def test_outside_all(self, two_boxes):
        assert point_in_zone(3.0, 0.5, two_boxes) is None

    def test_shared_edge_goes_to_earlier_zone(self, two_boxes):
        rings = [(z.zone_id, z.polygon[0]) for z in two_boxes]
        assert oracle_zone(rings, 1.0, 0.5) == "A"
        assert point_in_zone(1.0, 0.5, two_boxes) == "A"
        assert point_in_zone(1.0, 0.5, two_boxes[::-1]) == "B"

    def test_shared_vertex(self, two_boxes):
        assert point_in_zone(1.0, 1.0, two_boxes) == "A"

    def test_vectorised_matches_scalar(self, two_boxes, rng):
        xs = rng.uniform(-0.5, 2.5, 300)
        ys = rng.uniform(-0.5, 1.5, 300)
        idx = locate_points(xs, ys, two_boxes)
        for x, y, k in zip(xs, ys, idx):
            expected = point_in_zone(x, y, two_boxes)
            assert (two_boxes[k].zone_id if k >= 0 else None) == expected

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_agrees_with_ray_cast_on_random_convex_polygons(self, seed):
        rng = np.random.default_rng(seed)
        zones, rings = [], []
        for k in range(3):
            cx, cy = 3.0 * k, rng.uniform(-1, 1)
            pts = rng.normal(size=(12, 2)) + (cx, cy)
            hull = pts[ConvexHull(pts).vertices]
            ring = tuple(map(tuple, np.vstack([hull, hull[:1]])))
            zones.append(make_zone(f"Z{k}", ring))
            rings.append((f"Z{k}", ring))
        xs = rng.uniform(-3, 9, 1000)
        ys = rng.uniform(-4, 4, 1000)
        got = locate_points(xs, ys, zones)
        for x, y, k in zip(xs, ys, got):
            assert (zones[k].zone_id if k >= 0 else None) == oracle_zone(rings, x, y)


class TestGeometryValidation:
    def test_open_ring_names_zone(self):
        with pytest.raises(GeometryError, match="Z9"):
            validate_polygon("Z9", (((0, 0), (1, 0), (1, 1), (0, 1)),))

    def test_bow_tie_rejected(self):
        ring = ((0, 0), (1, 1), (1, 0), (0, 1), (0, 0))
        with pytest.raises(GeometryError, match="self-intersects"):
            validate_polygon("bow", (ring,))

    def test_simple_square_accepted(self):
        validate_polygon("ok", (box(0, 0, 1, 1),))

    def test_overlap_detected(self):
        zones = [make_zone("A", box(0, 0, 2, 2)), make_zone("B", box(1, 1, 3, 3))]
        with pytest.raises(GeometryError, match="overlaps"):
            check_non_overlapping(zones)

    def test_touching_zones_allowed(self, two_boxes):
        check_non_overlapping(two_boxes)

    def test_nonpositive_area(self):
        with pytest.raises(GeometryError):
            ZoneRecord("Z", (box(0, 0, 1, 1),), "residential", 0.0)


class TestArea:
    def test_square_ring_area(self):
        ring = square_ring(-70.65, -33.45, 1.2)
        assert polygon_area_km2((ring,)) == pytest.approx(1.44, rel=1e-3)

    def test_hole_is_subtracted(self):
        outer = square_ring(0.0, 0.0, 2.0)
        inner = square_ring(0.0, 0.0, 1.0)
        assert polygon_area_km2((outer, inner)) == pytest.approx(3.0, rel=1e-3)


class TestTypes:
    def test_grid_default_is_study_window(self):
        g = TimeGrid()
        assert (g.start_minute, g.end_minute, len(g)) == (360, 1439, 1080)
        assert 360 in g and 359 not in g and 1439 in g

    def test_grid_rejects_inverted_range(self):
        with pytest.raises(ValueError):
            TimeGrid(700, 600)

    def test_event_invariants(self):
        with pytest.raises(ValueError):
            NetworkEvent(dt.date(2016, 8, 1), 1440, "d", "t", 1.0)
        with pytest.raises(ValueError):
            NetworkEvent(dt.date(2016, 8, 1), 10, "d", "t", -1.0)
        with pytest.raises(ValueError):
            NetworkEvent(dt.date(2016, 8, 1), 10, "", "t", 1.0)

    def test_tower_coordinates(self):
        with pytest.raises(ValueError):
            Tower("t", 181.0, 0.0)

    def test_calendar_around_launch(self, launch):
        cal = StudyCalendar.around_launch(launch, 7)
        assert len(cal.pre_dates) == len(cal.post_dates) == 7
        assert launch not in cal.study_dates
        assert cal.excluded_dates == (launch,)
        assert set(cal.day_class) == set(cal.study_dates) | {launch}

    def test_calendar_rejects_overlap(self, launch):
        with pytest.raises(ValueError):
            StudyCalendar((launch,), (launch,))

    def test_calendar_groups_partition_dates(self, calendar):
        b = set(calendar.dates_in_group("business"))
        w = set(calendar.dates_in_group("weekend"))
        assert b.isdisjoint(w) and b | w == set(calendar.study_dates)
        assert len(w) == 4

    @given(st.integers(0, 1439))
    def test_minute_format_round_trip(self, minute):
        assert parse_minute(format_minute(minute)) == minute
