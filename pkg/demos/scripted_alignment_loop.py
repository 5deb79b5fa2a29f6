"""
One user-day through the generate / audit / regenerate loop
===========================================================

Uses the scripted backend so the run is offline and repeatable. The first
plan is rejected by the audit, the revision is accepted, and the provider
ledger shows where each call went.
"""

import json
from datetime import date, datetime, timedelta, timezone

from eventmob.alignment import LoopConfig, run_generation_loop
from eventmob.model import Step, Trajectory, UserHistory
from eventmob.providers import ScriptedProvider
from eventmob.schema import EventContext

JST = timezone(timedelta(hours=9))
DAY = date(2019, 10, 12)


def visit(day, hhmm, lat, lon, cat, sub):
    h, m = map(int, hhmm.split(":"))
    return Step(datetime(day.year, day.month, day.day, h, m, tzinfo=JST), lat, lon, cat, sub)


# A user who commutes by rail and eats out most evenings.
history = UserHistory(
    "u1",
    long_term=[Trajectory("u1", DAY - timedelta(days=d), (
        visit(DAY - timedelta(days=d), "08:10", 35.63, 139.58, "Travel & Transport", "Rail Station"),
        visit(DAY - timedelta(days=d), "19:30", 35.66, 139.70, "Dining and Drinking", "Izakaya"),
    )) for d in (14, 13, 12, 11)],
    short_term=[Trajectory("u1", DAY - timedelta(days=2), (
        visit(DAY - timedelta(days=2), "12:00", 35.65, 139.54, "Dining and Drinking", "Ramen Restaurant"),
    ))],
    event_start=datetime(2019, 10, 12, tzinfo=JST),
)

context = EventContext.from_dict({
    "event_profile": {"type": "natural disaster", "name": "Typhoon", "time": "2019-10-12", "regions": "Tokyo"},
    "intensity_and_scale": {"max_wind_speed": "55 m/s"},
    "infrastructure_and_service_impact": {"rail": "suspended from noon"},
    "official_directives": [{"directive": "avoid non-essential travel", "applicable_population": "all residents",
                             "geographic_scope": "Tokyo"}],
})

stay_home = {"steps": [], "justification": "stay at home all day"}
lunch_out = {"steps": [{"time": "11:30", "lat": 35.652, "lon": 139.543, "category": "Dining and Drinking",
                        "subcategory": "Ramen Restaurant"}],
             "justification": "a short walk to a nearby ramen shop before the rail shutdown"}
gist = {"primary_intent": "x", "habit_adherence": {"level": "low", "rationale": "x"},
        "event_compliance": {"level": "high", "rationale": "x"}}

# Replies are queued per call tag; each stage pops its own queue.
provider = ScriptedProvider({
    "pattern_gist": [{"core_behavior": "rail commute, eats out in the evening",
                      "points_of_inertia": ["daily meal out"], "points_of_fracture": ["rail suspension"]}],
    "event_gist": [{"primary_intent": "stay safe indoors", "behavioral_implications": ["fewer trips"],
                    "risk_reward_calculus": "outdoor risk is high"}],
    "generate": [stay_home],
    "action_gist": [gist, gist],
    "audit": [
        {"internal_ok": False, "external_ok": True,
         "internal_rationale": "drops the daily meal out entirely", "external_rationale": ""},
        {"internal_ok": True, "external_ok": True, "internal_rationale": "keeps a meal out",
         "external_rationale": "short, local, before the shutdown"},
    ],
    "regenerate": [lunch_out],
})

outcome = run_generation_loop(history, context, LoopConfig(max_iterations=3), provider, DAY)
print(json.dumps(outcome.to_dict(), indent=2))

# The regeneration prompt carries the audit's rationale.
regen = next(r for r in provider.requests if r.tag == "regenerate")
print("rationale in regeneration prompt:", "drops the daily meal out entirely" in regen.user_prompt)
print("calls by tag:", {k: v.calls for k, v in provider.ledger.snapshot().items()})
