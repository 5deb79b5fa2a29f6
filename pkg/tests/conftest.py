import json
from datetime import date, datetime, timedelta, timezone

import pytest

from eventmob.model import Step, Trajectory

JST = timezone(timedelta(hours=9))


def at(day: date, hhmm: str) -> datetime:
    hh, mm = hhmm.split(":")
    return datetime(day.year, day.month, day.day, int(hh), int(mm), tzinfo=JST)


def make_traj(user, day, visits):
    """visits: (HH:MM, lat, lon, category, subcategory[, poi_id])"""
    steps = []
    for v in visits:
        hhmm, lat, lon, cat, sub = v[:5]
        poi = v[5] if len(v) > 5 else None
        steps.append(Step(at(day, hhmm), lat, lon, cat, sub, poi))
    return Trajectory(user, day, tuple(steps))


# canned replies used across the loop tests

PATTERN = {
    "core_behavior": "Daily commute to a office",
    "points_of_inertia": ["Returning home to a specific neighborhood at night"],
    "points_of_fracture": ["Reliance on a single train line that might be suspended"],
}
EVENT = {
    "primary_intent": "High risk outdoors, strong incentive to stay home",
    "behavioral_implications": ["Evacuation from coastal areas, seeking indoor shelter"],
    "risk_reward_calculus": "Risk of injury outweighs reward of a non-essential outing",
}
ACTION = {
    "primary_intent": "To get essential supplies from a nearby store",
    "habit_adherence": {"level": "low", "rationale": "this trip deviates from the usual work commute"},
    "event_compliance": {"level": "high", "rationale": "the trip is short and avoids dangerous areas"},
}
PLAN = {
    "steps": [
        {"time": "09:00", "lat": 35.652, "lon": 139.543, "category": "Retail", "subcategory": "Convenience Store"},
        {"time": "12:30", "lat": 35.633, "lon": 139.577, "category": "Dining and Drinking", "subcategory": "Ramen Restaurant"},
        {"time": "18:10", "lat": 35.632, "lon": 139.577, "category": "Travel & Transport", "subcategory": "Rail Station"},
    ],
    "justification": "Short errands close to home before the storm peaks.",
}
ACCEPT = {"internal_ok": True, "external_ok": True, "internal_rationale": "fits", "external_rationale": "fits"}
REJECT = {
    "internal_ok": False,
    "external_ok": False,
    "internal_rationale": "conflicts with culinary exploration pattern",
    "external_rationale": "ignores the evacuation directive",
}


def js(obj) -> str:
    return json.dumps(obj)


# acceptance summary: one line per criterion at the end of the run

_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))
    elif report.when == "setup" and report.skipped and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], "skipped"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def day():
    return date(2019, 10, 12)


TYPHOON = {
    "event_profile": {
        "type": "natural disaster",
        "name": "Typhoon Hagibis",
        "time": "2019-10-12 to 2019-10-13",
        "regions": "Tokyo metropolitan area",
    },
    "intensity_and_scale": {"max_wind_speed": "55 m/s", "rainfall": "up to 1000 mm"},
    "infrastructure_and_service_impact": {
        "rail": "planned suspension of JR and private lines from noon on 12 October",
        "retail": "many department stores and convenience stores closed",
    },
    "official_directives": [
        {
            "directive": "avoid non-essential travel and prepare to evacuate",
            "applicable_population": "all residents",
            "geographic_scope": "Tokyo and neighbouring prefectures",
        }
    ],
}


@pytest.fixture
def typhoon_dict():
    return json.loads(json.dumps(TYPHOON))


@pytest.fixture
def typhoon_ctx():
    from eventmob.schema import EventContext

    return EventContext.from_dict(TYPHOON)
