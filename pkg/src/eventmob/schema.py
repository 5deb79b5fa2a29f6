"""Structured four-aspect event context built from a raw event narrative."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional

from .io import atomic_write_text
from .model import ValidationResult
from .prompts import DEFAULT_TEMPLATES, TemplateSet
from .providers import ChatRequest, Provider
from .structured import RepairFailed, ask_structured, extract_json_object

ASPECTS = ("event_profile", "intensity_and_scale", "infrastructure_and_service_impact", "official_directives")
PROFILE_KEYS = ("type", "name", "time", "regions")
DIRECTIVE_KEYS = ("directive", "applicable_population", "geographic_scope")


class SchemaConstructionError(RuntimeError):
    def __init__(self, message: str, responses=(), violations=()):
        super().__init__(message)
        self.responses = list(responses)
        self.violations = list(violations)


@dataclass(frozen=True)
class Directive:
    directive: str
    applicable_population: str
    geographic_scope: str


@dataclass
class EventContext:
    event_profile: dict
    intensity_and_scale: dict = field(default_factory=dict)
    infrastructure_and_service_impact: dict = field(default_factory=dict)
    official_directives: list[Directive] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "event_profile": dict(self.event_profile),
            "intensity_and_scale": dict(self.intensity_and_scale),
            "infrastructure_and_service_impact": dict(self.infrastructure_and_service_impact),
            "official_directives": [vars(d).copy() for d in self.official_directives],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, obj: dict) -> "EventContext":
        result = validate_event_context(obj)
        if not result.ok:
            raise SchemaConstructionError("invalid event context: " + "; ".join(result.violations),
                                          violations=result.violations)
        return cls(
            dict(obj["event_profile"]),
            dict(obj["intensity_and_scale"]),
            dict(obj["infrastructure_and_service_impact"]),
            [Directive(**{k: d[k] for k in DIRECTIVE_KEYS}) for d in obj["official_directives"]],
        )


def validate_event_context(ctx) -> ValidationResult:
    """Check the four-aspect structure of an ``EventContext`` or its dict form."""
    obj = ctx.to_dict() if isinstance(ctx, EventContext) else ctx
    if not isinstance(obj, dict):
        return ValidationResult(("event context is not an object",))
    problems = []
    for aspect in ASPECTS:
        if aspect not in obj:
            problems.append(f"missing aspect: {aspect}")
    profile = obj.get("event_profile")
    if "event_profile" in obj:
        if not isinstance(profile, dict):
            problems.append("event_profile must be an object")
        else:
            for key in PROFILE_KEYS:
                if key not in profile:
                    problems.append(f"event_profile missing key: {key}")
    for aspect in ("intensity_and_scale", "infrastructure_and_service_impact"):
        if aspect in obj and not isinstance(obj[aspect], dict):
            problems.append(f"{aspect} must be an object")
    directives = obj.get("official_directives")
    if "official_directives" in obj:
        if not isinstance(directives, list):
            problems.append("official_directives must be an array")
        else:
            for i, d in enumerate(directives):
                if not isinstance(d, dict):
                    problems.append(f"official_directives[{i}] must be an object")
                    continue
                for key in DIRECTIVE_KEYS:
                    if not isinstance(d.get(key), str):
                        problems.append(f"official_directives[{i}] missing string field: {key}")
    return ValidationResult(tuple(problems))


def construct_event_context(
    raw_event_text: str,
    provider: Provider,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    temperature: float = 0.1,
) -> EventContext:
    """One "schema" call (plus at most one re-ask on unparseable JSON)."""
    if not raw_event_text or not raw_event_text.strip():
        raise ValueError("raw event text is empty")
    system, user = templates["schema"].render(event_text=raw_event_text.strip())
    request = ChatRequest(system, user, temperature=temperature, tag="schema")
    try:
        obj = ask_structured(provider, request, extract_json_object)
    except RepairFailed as exc:
        raise SchemaConstructionError(str(exc), responses=exc.responses) from exc
    result = validate_event_context(obj)
    if not result.ok:
        raise SchemaConstructionError("; ".join(result.violations), violations=result.violations)
    return EventContext.from_dict(obj)


def routine_day_context(day: date, regions: str = "Tokyo metropolitan area") -> EventContext:
    """Context for a normal day: weekday or weekend operating status, no directives."""
    weekend = day.weekday() >= 5
    kind = "weekend" if weekend else "weekday"
    return EventContext(
        event_profile={
            "type": "routine day",
            "name": f"Regular {kind}",
            "time": f"{day.isoformat()} ({day:%A})",
            "regions": regions,
        },
        intensity_and_scale={"severity": "none"},
        infrastructure_and_service_impact={
            "public_transport": "weekend/holiday timetable" if weekend else "regular weekday timetable with rush hours",
            "businesses": "most offices closed, shops and leisure venues open" if weekend
            else "offices, schools and shops on regular hours",
        },
        official_directives=[],
    )


# -- on-disk cache -------------------------------------------------------------


def cache_path(cache_dir, raw_event_text: str) -> Path:
    digest = hashlib.sha256(raw_event_text.strip().encode()).hexdigest()[:16]
    return Path(cache_dir) / f"event_context_{digest}.json"


def load_context(path) -> EventContext:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaConstructionError(f"{path}: not JSON ({exc})") from exc
    return EventContext.from_dict(obj)


def cached_event_context(
    raw_event_text: str,
    provider: Optional[Provider],
    cache_dir,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> EventContext:
    """Build the context once per event text; later calls read the cache file."""
    path = cache_path(cache_dir, raw_event_text)
    if path.exists():
        return load_context(path)
    if provider is None:
        raise SchemaConstructionError("no cached context and no provider to build one")
    ctx = construct_event_context(raw_event_text, provider, templates)
    atomic_write_text(path, ctx.to_json() + "\n")
    return ctx

