from datetime import date, datetime, timedelta

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import JST, at, make_traj
from eventmob.model import (
    CheckIn,
    GeoPoint,
    Step,
    Trajectory,
    UserHistory,
    parse_tz,
    short_term_cutoff,
    snap_to_time_grid,
    trajectories_from_checkins,
    validate_trajectory,
)


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("2020-04-07 18:33", "2020-04-07 18:30"),
        ("2020-04-07 18:30", "2020-04-07 18:30"),
        ("2020-04-07 23:59", "2020-04-07 23:50"),
    ],
)
def test_snap_examples(raw, expected):
    t = datetime.fromisoformat(raw).replace(tzinfo=JST)
    assert snap_to_time_grid(t) == datetime.fromisoformat(expected).replace(tzinfo=JST)


@given(st.datetimes(timezones=st.just(JST)))
def test_snap_idempotent_and_same_day(t):
    s = snap_to_time_grid(t)
    assert snap_to_time_grid(s) == s
    assert s.date() == t.date()
    assert s.minute % 10 == 0 and s.second == 0 and s.microsecond == 0
    assert timedelta(0) <= t - s < timedelta(minutes=10)


def test_geopoint_range():
    GeoPoint(90, -180)
    with pytest.raises(ValueError, match="lat out of range"):
        GeoPoint(91.0, 0)
    with pytest.raises(ValueError):
        GeoPoint(0, 180.5)
    with pytest.raises(ValueError):
        GeoPoint(float("nan"), 0)


def test_checkin_requires_categories():
    kw = dict(user_id="u", point=GeoPoint(35, 139), poi_id="p", timestamp=at(date(2020, 4, 7), "18:33"))
    with pytest.raises(ValueError):
        CheckIn(subcategory="", category="Retail", **kw)
    with pytest.raises(ValueError):
        CheckIn(subcategory="Clothing Store", category="", **kw)


def test_empty_trajectory_valid(day):
    assert validate_trajectory(Trajectory("u", day)).ok


def test_non_monotonic_reported(day):
    traj = make_traj("u", day, [("09:00", 35, 139, "A", "a"), ("08:50", 35, 139, "A", "a")])
    result = validate_trajectory(traj)
    assert not result.ok
    assert result.violations == ("non-monotonic time at index 1",)


def test_off_grid_reported(day):
    traj = make_traj("u", day, [("09:03", 35, 139, "A", "a")])
    assert validate_trajectory(traj).violations == ("off-grid time at index 0",)


def test_other_day_reported(day):
    step = Step(at(day + timedelta(days=1), "09:00"), 35, 139, "A", "a")
    assert "step on a different day at index 0" in validate_trajectory(Trajectory("u", day, (step,))).violations


def test_equal_times_allowed(day):
    traj = make_traj("u", day, [("09:00", 35, 139, "A", "a"), ("09:00", 35.1, 139, "B", "b")])
    assert validate_trajectory(traj).ok


@given(st.lists(st.integers(0, 143), max_size=12))
def test_accepted_trajectories_are_sorted_and_on_grid(slots):
    day = date(2020, 4, 7)
    steps = [Step(at(day, f"{s // 6:02d}:{s % 6 * 10:02d}"), 35, 139, "A", "a") for s in slots]
    traj = Trajectory("u", day, tuple(steps))
    if validate_trajectory(traj).ok:
        times = [s.time for s in traj.steps]
        assert times == sorted(times)
        assert all(t.minute % 10 == 0 for t in times)
    else:
        assert slots != sorted(slots)


def test_parse_tz():
    assert parse_tz("+09:00") == JST
    assert parse_tz("UTC+9") == JST
    assert parse_tz(9) == JST
    assert parse_tz(None) == JST
    assert parse_tz("-05:30").utcoffset(None) == -timedelta(hours=5, minutes=30)


def test_short_term_cutoff():
    start = datetime(2019, 10, 12, tzinfo=JST)
    assert short_term_cutoff(start, timedelta(days=7)) == date(2019, 10, 5)
    # a mid-day start pushes the first full short-term day forward
    assert short_term_cutoff(start.replace(hour=12), timedelta(days=7)) == date(2019, 10, 6)


def test_user_history_rejects_overlap(day):
    t = make_traj("u", date(2019, 10, 6), [])
    start = datetime(2019, 10, 12, tzinfo=JST)
    with pytest.raises(ValueError):
        UserHistory("u", [t], [t], start)
    with pytest.raises(ValueError):
        UserHistory("u", [t], [], start)  # 10-06 is short-term


def test_trajectories_from_checkins_groups_and_snaps():
    recs = [
        CheckIn("u1", GeoPoint(35, 139), "p1", "Cafe", "Dining", datetime(2020, 4, 7, 18, 33, tzinfo=JST)),
        CheckIn("u1", GeoPoint(35, 139), "p2", "Bar", "Dining", datetime(2020, 4, 7, 9, 1, tzinfo=JST)),
        CheckIn("u2", GeoPoint(35, 139), "p1", "Cafe", "Dining", datetime(2020, 4, 8, 0, 5, tzinfo=JST)),
    ]
    trajs = trajectories_from_checkins(recs, JST)
    assert [(t.user_id, t.date, len(t)) for t in trajs] == [("u1", date(2020, 4, 7), 2), ("u2", date(2020, 4, 8), 1)]
    assert [s.time.strftime("%H:%M") for s in trajs[0].steps] == ["09:00", "18:30"]
    assert all(validate_trajectory(t).ok for t in trajs)
