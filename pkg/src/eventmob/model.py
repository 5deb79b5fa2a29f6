"""Core domain types: points, check-ins, per-day trajectories and user histories."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Optional

GRID_MINUTES = 10
DEFAULT_TZ = timezone(timedelta(hours=9))


def parse_tz(spec: str | int | float | None) -> timezone:
    """Turn ``"+09:00"``, ``"UTC+9"``, ``9`` or ``None`` into a fixed-offset tz."""
    if spec is None:
        return DEFAULT_TZ
    if isinstance(spec, (int, float)):
        return timezone(timedelta(hours=spec))
    text = spec.strip().upper().removeprefix("UTC")
    if text in ("", "Z"):
        return timezone.utc
    sign = -1 if text.startswith("-") else 1
    text = text.lstrip("+-")
    hours, _, minutes = text.partition(":")
    return timezone(sign * timedelta(hours=int(hours), minutes=int(minutes or 0)))


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError("lat out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError("lon out of range")


@dataclass(frozen=True)
class CheckIn:
    """One geotagged, categorized visit.

    Raw ingested records may carry seconds; ``anonymize_records`` truncates
    them to the minute.
    """

    user_id: str
    point: GeoPoint
    poi_id: str
    subcategory: str
    category: str
    timestamp: datetime
    subcategory_id: Optional[int] = None
    comment: Optional[str] = None

    def __post_init__(self):
        if not self.category:
            raise ValueError("category is empty")
        if not self.subcategory:
            raise ValueError("subcategory is empty")
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must carry a UTC offset")


@dataclass(frozen=True)
class Step:
    """A visit inside a trajectory. ``poi_id`` is unknown for generated steps."""

    time: datetime
    lat: float
    lon: float
    category: str
    subcategory: str
    poi_id: Optional[str] = None

    @property
    def point(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)

    @classmethod
    def from_checkin(cls, rec: CheckIn, snap: bool = True) -> "Step":
        t = snap_to_time_grid(rec.timestamp) if snap else rec.timestamp
        return cls(t, rec.point.lat, rec.point.lon, rec.category, rec.subcategory, rec.poi_id)


@dataclass(frozen=True)
class Trajectory:
    user_id: str
    date: date
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    long_term: tuple[Trajectory, ...]
    short_term: tuple[Trajectory, ...]
    event_start: datetime
    short_window: timedelta = timedelta(days=7)

    def __post_init__(self):
        object.__setattr__(self, "long_term", tuple(self.long_term))
        object.__setattr__(self, "short_term", tuple(self.short_term))
        long_days = {t.date for t in self.long_term}
        short_days = {t.date for t in self.short_term}
        if long_days & short_days:
            raise ValueError("long_term and short_term share dates")
        cut = short_term_cutoff(self.event_start, self.short_window)
        if any(d < cut for d in short_days) or any(d >= cut for d in long_days):
            raise ValueError("trajectory dates on the wrong side of the short-term cutoff")

    @property
    def trajectories(self) -> tuple[Trajectory, ...]:
        return self.long_term + self.short_term

    def __len__(self):
        return len(self.long_term) + len(self.short_term)


def short_term_cutoff(event_start: datetime, short_window: timedelta) -> date:
    """First calendar day counted as short-term.

    A day is treated as the instant at its local midnight, so a day belongs to
    the short-term set iff its midnight is at or after ``event_start - window``.
    """
    threshold = event_start - short_window
    day = threshold.date()
    if threshold.timetz().replace(tzinfo=None) != datetime.min.time():
        day += timedelta(days=1)
    return day


def snap_to_time_grid(t: datetime) -> datetime:
    """Floor ``t`` to the 10-minute grid; never leaves the calendar day."""
    return t.replace(minute=t.minute - t.minute % GRID_MINUTES, second=0, microsecond=0)


def is_on_grid(t: datetime) -> bool:
    return t.minute % GRID_MINUTES == 0 and t.second == 0 and t.microsecond == 0


def validate_trajectory(traj: Trajectory) -> ValidationResult:
    problems = []
    prev = None
    for i, step in enumerate(traj.steps):
        if step.time.date() != traj.date:
            problems.append(f"step on a different day at index {i}")
        if not is_on_grid(step.time):
            problems.append(f"off-grid time at index {i}")
        if prev is not None and step.time < prev:
            problems.append(f"non-monotonic time at index {i}")
        prev = step.time
    return ValidationResult(tuple(problems))


def trajectories_from_checkins(
    records: Iterable[CheckIn], tz: timezone = DEFAULT_TZ, snap: bool = True
) -> list[Trajectory]:
    """Group check-ins into per-user, per-local-day trajectories.

    Output is sorted by (user_id, date); steps are sorted by time.
    """
    groups: dict[tuple[str, date], list[Step]] = {}
    for rec in records:
        local = rec.timestamp.astimezone(tz)
        t = snap_to_time_grid(local) if snap else local
        step = Step(t, rec.point.lat, rec.point.lon, rec.category, rec.subcategory, rec.poi_id)
        groups.setdefault((rec.user_id, local.date()), []).append(step)
    out = []
    for (uid, day), steps in sorted(groups.items()):
        steps.sort(key=lambda s: s.time)
        out.append(Trajectory(uid, day, tuple(steps)))
    return out
