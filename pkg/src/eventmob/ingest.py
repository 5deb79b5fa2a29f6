"""Check-in record ingestion, pseudonymization, history partitioning and counts."""

from __future__ import annotations

import hashlib
import hmac
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import IO, Iterable, Optional, Sequence

from .model import (
    DEFAULT_TZ,
    CheckIn,
    GeoPoint,
    Trajectory,
    UserHistory,
    short_term_cutoff,
    trajectories_from_checkins,
)

REQUIRED_FIELDS = ("user_id", "lat", "lon", "poi_id", "subcategory", "category", "timestamp")


class IngestError(Exception):
    """Fatal input problem (bad encoding, unknown format)."""


@dataclass(frozen=True)
class SkippedLine:
    line: int
    reason: str


@dataclass
class ParsedRecords:
    records: list[CheckIn] = field(default_factory=list)
    skipped: list[SkippedLine] = field(default_factory=list)


@dataclass(frozen=True)
class EventWindow:
    name: str
    event_start: datetime
    event_end: datetime
    pre_event_start: datetime
    pre_event_end: datetime

    def __post_init__(self):
        if not (self.pre_event_start < self.pre_event_end < self.event_start <= self.event_end):
            raise ValueError(f"{self.name}: window bounds out of order")

    @property
    def event_days(self):
        day, last = self.event_start.date(), self.event_end.date()
        out = []
        while day <= last:
            out.append(day)
            day += timedelta(days=1)
        return out


def _window(name, start, end, pre_start, pre_end, tz=DEFAULT_TZ):
    def at(s, hh, mm):
        return datetime.fromisoformat(s).replace(hour=hh, minute=mm, tzinfo=tz)

    return EventWindow(name, at(start, 0, 0), at(end, 23, 59), at(pre_start, 0, 0), at(pre_end, 23, 59))


SCENARIOS = {
    "typhoon": _window("Typhoon Hagibis", "2019-10-12", "2019-10-13", "2019-08-13", "2019-10-11"),
    "covid": _window("COVID-19 Pandemic", "2020-04-07", "2020-04-13", "2020-02-07", "2020-04-06"),
    "olympics": _window("Tokyo 2021 Olympics", "2021-07-23", "2021-07-29", "2021-05-24", "2021-07-22"),
    "normal": _window("Normal Period", "2019-09-01", "2019-09-30", "2019-07-03", "2019-08-31"),
}


@dataclass(frozen=True)
class DatasetStats:
    checkin_count: int = 0
    unique_poi_count: int = 0
    unique_subcategory_count: int = 0
    user_count: int = 0

    def to_dict(self) -> dict:
        return {
            "checkins": self.checkin_count,
            "pois": self.unique_poi_count,
            "subcategories": self.unique_subcategory_count,
            "users": self.user_count,
        }


def parse_timestamp(text: str, tz: Optional[timezone] = None) -> datetime:
    if not isinstance(text, str):
        raise ValueError("timestamp must be a string")
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return ts.astimezone(tz) if tz is not None else ts


def _record_from_obj(obj, tz) -> CheckIn:
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    missing = [k for k in REQUIRED_FIELDS if k not in obj]
    if missing:
        raise ValueError("missing field(s): " + ", ".join(missing))
    for key in ("user_id", "poi_id", "subcategory", "category"):
        if not isinstance(obj[key], str):
            raise ValueError(f"{key} must be a string")
    lat, lon = obj["lat"], obj["lon"]
    for key, v in (("lat", lat), ("lon", lon)):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError(f"{key} must be a finite number")
    if not -90 <= lat <= 90:
        raise ValueError("lat out of range")
    if not -180 <= lon <= 180:
        raise ValueError("lon out of range")
    sub_id = obj.get("subcategory_id")
    if sub_id is not None and (isinstance(sub_id, bool) or not isinstance(sub_id, int)):
        raise ValueError("subcategory_id must be an integer")
    comment = obj.get("comment")
    if comment is not None and not isinstance(comment, str):
        raise ValueError("comment must be a string")
    return CheckIn(
        user_id=obj["user_id"],
        point=GeoPoint(float(lat), float(lon)),
        poi_id=obj["poi_id"],
        subcategory=obj["subcategory"],
        category=obj["category"],
        timestamp=parse_timestamp(obj["timestamp"], tz),
        subcategory_id=sub_id,
        comment=comment,
    )


def parse_records(stream, fmt: str = "jsonl", tz: Optional[timezone] = DEFAULT_TZ) -> ParsedRecords:
    """Parse JSON-lines check-ins from a binary or text stream (or raw bytes/str).

    Bad lines are skipped and reported with their 1-based line number; an
    undecodable stream raises ``IngestError``. Timestamps are converted to
    ``tz`` but otherwise left at their raw precision.
    """
    if fmt != "jsonl":
        raise IngestError(f"unsupported format: {fmt!r}")
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    try:
        data = stream.read()
    except UnicodeDecodeError as exc:
        raise IngestError(f"input is not valid UTF-8: {exc}") from exc
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise IngestError(f"input is not valid UTF-8: {exc}") from exc

    out = ParsedRecords()
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.records.append(_record_from_obj(obj, tz))
        except (ValueError, TypeError) as exc:
            # json.JSONDecodeError is a ValueError
            out.skipped.append(SkippedLine(lineno, str(exc)))
    return out


def record_to_dict(rec: CheckIn) -> dict:
    obj = {
        "user_id": rec.user_id,
        "lat": rec.point.lat,
        "lon": rec.point.lon,
        "poi_id": rec.poi_id,
        "subcategory": rec.subcategory,
    }
    if rec.subcategory_id is not None:
        obj["subcategory_id"] = rec.subcategory_id
    obj["category"] = rec.category
    obj["timestamp"] = rec.timestamp.isoformat(timespec="seconds")
    if rec.comment is not None:
        obj["comment"] = rec.comment
    return obj


def write_records(records: Iterable[CheckIn], fp: IO[str]) -> None:
    for rec in records:
        fp.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")


# -- pseudonymization --------------------------------------------------------

_SURROGATE_DIGITS = 16
_TAG_DIGITS = 8  # a raw numeric id passes through only with probability 1e-8


def _mac(salt: str, msg: str) -> int:
    digest = hmac.new(salt.encode(), msg.encode(), hashlib.sha256).digest()
    return int.from_bytes(digest[:8], "big")


def _is_surrogate(value: str, salt: str) -> bool:
    if len(value) != _SURROGATE_DIGITS + _TAG_DIGITS or not value.isdigit():
        return False
    body, tag = value[:_SURROGATE_DIGITS], value[_SURROGATE_DIGITS:]
    return _mac(salt, "tag:" + body) % 10**_TAG_DIGITS == int(tag)


def surrogate_id(value: str, kind: str, salt: str) -> str:
    """Keyed one-way integer surrogate for an identifier.

    The surrogate is a 24-digit integer string: 16 digits of HMAC-SHA256 plus an
    8-digit keyed check tag, so already-pseudonymized ids are recognized and
    passed through unchanged.
    """
    if _is_surrogate(value, salt):
        return value
    body = f"{_mac(salt, kind + ':' + value) % 10**_SURROGATE_DIGITS:0{_SURROGATE_DIGITS}d}"
    tag = _mac(salt, "tag:" + body) % 10**_TAG_DIGITS
    return f"{body}{tag:0{_TAG_DIGITS}d}"


def anonymize_records(records: Sequence[CheckIn], salt: str) -> list[CheckIn]:
    """Replace user/POI ids with keyed surrogates and truncate times to the minute."""
    return [
        replace(
            rec,
            user_id=surrogate_id(rec.user_id, "user", salt),
            poi_id=surrogate_id(rec.poi_id, "poi", salt),
            timestamp=rec.timestamp.replace(second=0, microsecond=0),
        )
        for rec in records
    ]


# -- filtering -----------------------------------------------------------------


def filter_bbox(records: Iterable[CheckIn], bbox) -> list[CheckIn]:
    """Keep records inside ``bbox`` = (lat_min, lat_max, lon_min, lon_max)."""
    lat_min, lat_max, lon_min, lon_max = bbox
    return [r for r in records if lat_min <= r.point.lat <= lat_max and lon_min <= r.point.lon <= lon_max]


def filter_dense_users(records: Sequence[CheckIn], min_checkins: int) -> list[CheckIn]:
    """Drop users with fewer than ``min_checkins`` records in the given set."""
    counts = Counter(r.user_id for r in records)
    return [r for r in records if counts[r.user_id] >= min_checkins]


# -- partitioning --------------------------------------------------------------


@dataclass(frozen=True)
class Rejected:
    record: CheckIn
    reason: str


def partition_history(
    records: Sequence[CheckIn],
    event_start: datetime,
    short_window: timedelta = timedelta(days=7),
    tz: timezone = DEFAULT_TZ,
) -> tuple[UserHistory, list[Rejected]]:
    """Split one user's pre-event records into long- and short-term day sets.

    Records at or after ``event_start`` are returned in the rejected list and
    left out of the history.
    """
    users = {r.user_id for r in records}
    if len(users) > 1:
        raise ValueError(f"records span {len(users)} users")
    user_id = users.pop() if users else ""
    event_start = event_start.astimezone(tz)
    kept, rejected = [], []
    for rec in records:
        if rec.timestamp >= event_start:
            rejected.append(Rejected(rec, "record at or after event start"))
        else:
            kept.append(rec)
    cut = short_term_cutoff(event_start, short_window)
    long_term: list[Trajectory] = []
    short_term: list[Trajectory] = []
    for traj in trajectories_from_checkins(kept, tz):
        (short_term if traj.date >= cut else long_term).append(traj)
    return UserHistory(user_id, long_term, short_term, event_start, short_window), rejected


def partition_all(
    records: Sequence[CheckIn],
    event_start: datetime,
    short_window: timedelta = timedelta(days=7),
    tz: timezone = DEFAULT_TZ,
) -> dict[str, UserHistory]:
    """``partition_history`` per user; records after the event start are dropped."""
    by_user: dict[str, list[CheckIn]] = {}
    for rec in records:
        by_user.setdefault(rec.user_id, []).append(rec)
    return {uid: partition_history(recs, event_start, short_window, tz)[0] for uid, recs in sorted(by_user.items())}


def dataset_statistics(records: Iterable[CheckIn]) -> DatasetStats:
    n = 0
    pois, subs, users = set(), set(), set()
    for rec in records:
        n += 1
        pois.add(rec.poi_id)
        subs.add(rec.subcategory)
        users.add(rec.user_id)
    return DatasetStats(n, len(pois), len(subs), len(users))
