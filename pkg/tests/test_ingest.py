import io
import json
from datetime import date, datetime, timedelta
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import JST
from eventmob.ingest import (
    SCENARIOS,
    DatasetStats,
    EventWindow,
    IngestError,
    anonymize_records,
    dataset_statistics,
    filter_bbox,
    filter_dense_users,
    parse_records,
    partition_history,
    record_to_dict,
    surrogate_id,
    write_records,
)
from eventmob.model import CheckIn, GeoPoint

FIXTURES = Path(__file__).parent / "fixtures"

SAMPLE = (
    '{"user_id":"0118","lat":35.652,"lon":139.543,"poi_id":"1003","subcategory":"Home Appliance Store",'
    '"category":"Retail","timestamp":"2020-04-07T18:33:00+09:00",'
    '"comment":"Oh no, an emergency declaration has been announced!!"}'
)


def rec(user="0118", poi="1003", ts=datetime(2019, 10, 6, 10, 0, tzinfo=JST), sub="Cafe", cat="Dining"):
    return CheckIn(user, GeoPoint(35.65, 139.54), poi, sub, cat, ts)


def test_parse_sample_row():
    out = parse_records(SAMPLE.encode())
    assert out.skipped == []
    (r,) = out.records
    assert r.user_id == "0118"
    assert r.point == GeoPoint(35.652, 139.543)
    assert r.poi_id == "1003"
    assert (r.subcategory, r.category) == ("Home Appliance Store", "Retail")
    assert r.timestamp == datetime(2020, 4, 7, 18, 33, tzinfo=JST)
    assert r.comment.startswith("Oh no")
    assert r.subcategory_id is None


def test_parse_empty():
    assert parse_records(b"").records == []


def test_parse_skips_bad_lines_with_numbers():
    bad_lat = SAMPLE.replace("35.652", "91.0")
    text = "\n".join([SAMPLE, bad_lat, "{not json", SAMPLE.replace('"category":"Retail",', ""), SAMPLE])
    out = parse_records(text)
    assert len(out.records) == 2
    assert [(s.line, s.reason) for s in out.skipped][0] == (2, "lat out of range")
    assert [s.line for s in out.skipped] == [2, 3, 4]
    assert "category" in out.skipped[2].reason


def test_parse_keeps_raw_seconds():
    out = parse_records(SAMPLE.replace("18:33:00", "18:33:47"))
    assert out.records[0].timestamp.second == 47


def test_parse_rejects_naive_timestamp():
    out = parse_records(SAMPLE.replace("+09:00", ""))
    assert out.records == [] and "offset" in out.skipped[0].reason


def test_parse_converts_to_local_tz():
    out = parse_records(SAMPLE.replace("2020-04-07T18:33:00+09:00", "2020-04-07T09:33:00Z"))
    assert out.records[0].timestamp.utcoffset() == timedelta(hours=9)
    assert out.records[0].timestamp.hour == 18


def test_bad_encoding_is_fatal():
    with pytest.raises(IngestError):
        parse_records(b"\xff\xfe\xfa" + SAMPLE.encode())
    with pytest.raises(IngestError):
        parse_records(b"", fmt="csv")


def test_write_round_trip():
    records = parse_records(SAMPLE).records
    buf = io.StringIO()
    write_records(records, buf)
    assert parse_records(buf.getvalue()).records == records
    assert json.loads(buf.getvalue())["timestamp"] == "2020-04-07T18:33:00+09:00"


def test_anonymize_determinism_and_distinctness():
    records = [rec("0118", "1"), rec("0118", "2"), rec("0205", "1")]
    anon = anonymize_records(records, "salt")
    assert anon[0].user_id == anon[1].user_id
    assert anon[0].user_id != anon[2].user_id
    assert anon[0].poi_id == anon[2].poi_id != anon[1].poi_id
    assert all(a.user_id.isdigit() and a.poi_id.isdigit() for a in anon)
    assert "0118" not in {a.user_id for a in anon}
    # salt is the key
    assert anonymize_records(records, "other")[0].user_id != anon[0].user_id
    assert anonymize_records(records, "salt") == anon


def test_anonymize_truncates_seconds():
    anon = anonymize_records([rec(ts=datetime(2020, 4, 7, 18, 33, 47, tzinfo=JST))], "s")
    assert anon[0].timestamp == datetime(2020, 4, 7, 18, 33, tzinfo=JST)


def test_anonymize_idempotent_and_order_preserving():
    records = parse_records((FIXTURES / "records50.jsonl").read_bytes()).records
    once = anonymize_records(records, "k")
    assert anonymize_records(once, "k") == once
    assert len(once) == len(records)
    assert [r.timestamp for r in once] == [r.timestamp for r in records]


def test_user_ids_on_fixture_stay_distinct():
    records = parse_records((FIXTURES / "records50.jsonl").read_bytes()).records
    anon = anonymize_records(records, "k")
    assert len({r.user_id for r in anon}) == len({r.user_id for r in records})
    assert len({r.poi_id for r in anon}) == len({r.poi_id for r in records})


@given(st.text(min_size=1, max_size=30))
@settings(max_examples=50)
def test_surrogate_stable(value):
    s = surrogate_id(value, "user", "salt")
    assert s == surrogate_id(value, "user", "salt")
    assert surrogate_id(s, "user", "salt") == s
    assert len(s) == 24 and s.isdigit()


EVENT_START = datetime(2019, 10, 12, 0, 0, tzinfo=JST)


def test_partition_examples():
    records = [
        rec(ts=datetime(2019, 10, 6, 9, 0, tzinfo=JST)),
        rec(ts=datetime(2019, 10, 4, 9, 0, tzinfo=JST)),
        rec(ts=datetime(2019, 10, 5, 0, 0, tzinfo=JST)),
        rec(ts=datetime(2019, 10, 12, 1, 0, tzinfo=JST)),
    ]
    hist, rejected = partition_history(records, EVENT_START, timedelta(days=7), JST)
    assert [t.date for t in hist.short_term] == [date(2019, 10, 5), date(2019, 10, 6)]
    assert [t.date for t in hist.long_term] == [date(2019, 10, 4)]
    assert len(rejected) == 1 and rejected[0].record.timestamp.day == 12


def test_partition_single_user_only():
    with pytest.raises(ValueError):
        partition_history([rec("a"), rec("b")], EVENT_START)


@given(st.lists(st.integers(0, 59), min_size=1, max_size=40), st.integers(0, 20))
def test_partition_is_a_disjoint_cover(offsets, window):
    records = [rec(ts=EVENT_START - timedelta(days=o, hours=-1) - timedelta(days=1)) for o in offsets]
    hist, rejected = partition_history(records, EVENT_START, timedelta(days=window), JST)
    assert rejected == []
    long_days = {t.date for t in hist.long_term}
    short_days = {t.date for t in hist.short_term}
    assert not long_days & short_days
    assert len(long_days) + len(short_days) == len({r.timestamp.date() for r in records})
    assert sum(len(t) for t in hist.trajectories) == len(records)


def test_dataset_statistics_small():
    assert dataset_statistics([]) == DatasetStats(0, 0, 0, 0)
    stats = dataset_statistics([rec("a", "1"), rec("a", "1", sub="Bar"), rec("b", "2")])
    assert (stats.checkin_count, stats.unique_poi_count) == (3, 2)
    assert stats.to_dict() == {"checkins": 3, "pois": 2, "subcategories": 2, "users": 2}


def test_dataset_statistics_fixture():
    records = parse_records((FIXTURES / "records50.jsonl").read_bytes()).records
    # fixture layout: 5 users x 10 records; POIs 1001-1020 once, then 1001-1015 twice;
    # each POI maps to one of 12 subcategories and all 12 occur
    assert dataset_statistics(records) == DatasetStats(50, 20, 12, 5)


@given(st.integers(0, 20), st.integers(0, 20))
def test_statistics_additive_checkins(n, m):
    a = [rec("a", str(i)) for i in range(n)]
    b = [rec("b", str(i)) for i in range(m)]
    assert dataset_statistics(a + b).checkin_count == n + m


def test_filters():
    inside, outside = rec("a"), CheckIn("b", GeoPoint(34.7, 135.5), "9", "Cafe", "Dining", EVENT_START)
    assert filter_bbox([inside, outside], (35.5, 35.9, 139.3, 139.9)) == [inside]
    assert filter_dense_users([rec("a"), rec("a"), rec("b")], 2) == [rec("a"), rec("a")]


def test_scenarios_are_consistent():
    typhoon = SCENARIOS["typhoon"]
    assert typhoon.event_start == datetime(2019, 10, 12, tzinfo=JST)
    assert typhoon.event_days == [date(2019, 10, 12), date(2019, 10, 13)]
    assert len(SCENARIOS["covid"].event_days) == 7
    with pytest.raises(ValueError):
        EventWindow("bad", EVENT_START, EVENT_START, EVENT_START, EVENT_START)


def test_record_to_dict_field_order():
    d = record_to_dict(parse_records(SAMPLE).records[0])
    assert list(d)[:5] == ["user_id", "lat", "lon", "poi_id", "subcategory"]


def test_raw_numeric_ids_are_replaced():
    for raw in ("1" * 24, "1184030422417887232", "0" * 24):
        assert surrogate_id(raw, "user", "salt") != raw
