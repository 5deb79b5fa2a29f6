"""Pattern, event and action gists: typed records, parsing and extraction calls."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Hashable, Optional, Union

from .model import Trajectory, UserHistory, validate_trajectory
from .prompts import DEFAULT_TEMPLATES, TemplateSet, render_json, render_trajectories, render_trajectory
from .providers import ChatRequest, Provider
from .schema import EventContext
from .structured import RepairFailed, StructuredParseError, ask_structured, extract_json_object


class GistError(RuntimeError):
    def __init__(self, message: str, responses=(), errors=()):
        super().__init__(message)
        self.responses = list(responses)
        self.errors = list(errors)


class Level(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class Rated:
    level: Level
    rationale: str

    def to_dict(self):
        return {"level": self.level.value, "rationale": self.rationale}


@dataclass(frozen=True)
class PatternGist:
    core_behavior: str
    points_of_inertia: tuple[str, ...] = ()
    points_of_fracture: tuple[str, ...] = ()

    def to_dict(self):
        return {
            "core_behavior": self.core_behavior,
            "points_of_inertia": list(self.points_of_inertia),
            "points_of_fracture": list(self.points_of_fracture),
        }


@dataclass(frozen=True)
class EventGist:
    primary_intent: str
    behavioral_implications: tuple[str, ...] = ()
    risk_reward_calculus: str = ""

    def to_dict(self):
        return {
            "primary_intent": self.primary_intent,
            "behavioral_implications": list(self.behavioral_implications),
            "risk_reward_calculus": self.risk_reward_calculus,
        }


@dataclass(frozen=True)
class ActionGist:
    primary_intent: str
    habit_adherence: Rated
    event_compliance: Rated

    def to_dict(self):
        return {
            "primary_intent": self.primary_intent,
            "habit_adherence": self.habit_adherence.to_dict(),
            "event_compliance": self.event_compliance.to_dict(),
        }


@dataclass(frozen=True)
class Justification:
    text: str = ""


Gist = Union[PatternGist, EventGist, ActionGist]


# -- parsing -------------------------------------------------------------------


def _text(obj, key, problems, required=True):
    value = obj.get(key)
    if value is None:
        problems.append(f"missing field: {key}")
        return ""
    if not isinstance(value, str):
        problems.append(f"{key} must be a string")
        return ""
    if required and not value.strip():
        problems.append(f"{key} must be non-empty")
    return value


def _text_list(obj, key, problems):
    value = obj.get(key)
    if value is None:
        problems.append(f"missing field: {key}")
        return ()
    if isinstance(value, str):
        # a lone string is accepted as a one-item list
        return (value,)
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        problems.append(f"{key} must be a list of strings")
        return ()
    return tuple(value)


def _rated(obj, key, problems):
    value = obj.get(key)
    if value is None:
        problems.append(f"missing field: {key}")
        return None
    if not isinstance(value, dict):
        problems.append(f"{key} must be an object with level and rationale")
        return None
    level = value.get("level")
    if not isinstance(level, str) or level.strip().lower() not in {lv.value for lv in Level}:
        problems.append(f"{key}.level must be one of low|medium|high, got {level!r}")
        return None
    rationale = value.get("rationale", "")
    if not isinstance(rationale, str):
        problems.append(f"{key}.rationale must be a string")
        return None
    return Rated(Level(level.strip().lower()), rationale)


def _pattern(obj, problems):
    return PatternGist(
        _text(obj, "core_behavior", problems),
        _text_list(obj, "points_of_inertia", problems),
        _text_list(obj, "points_of_fracture", problems),
    )


def _event(obj, problems):
    return EventGist(
        _text(obj, "primary_intent", problems),
        _text_list(obj, "behavioral_implications", problems),
        _text(obj, "risk_reward_calculus", problems, required=False),
    )


def _action(obj, problems):
    return ActionGist(
        _text(obj, "primary_intent", problems),
        _rated(obj, "habit_adherence", problems),
        _rated(obj, "event_compliance", problems),
    )


_BUILDERS = {"pattern": _pattern, "event": _event, "action": _action}


def parse_structured_gist(text: str, schema_id: str) -> Gist:
    """Parse the first JSON object in ``text`` as a gist of the given kind.

    Raises ``StructuredParseError`` listing every schema violation.
    """
    if schema_id not in _BUILDERS:
        raise ValueError(f"unknown gist schema: {schema_id!r}")
    obj = extract_json_object(text)
    problems: list[str] = []
    gist = _BUILDERS[schema_id](obj, problems)
    if problems:
        raise StructuredParseError(f"{schema_id} gist: " + "; ".join(problems), problems)
    return gist


# -- caching -------------------------------------------------------------------


class GistCache:
    """Write-once memo keyed by user or event; compute runs under a per-key lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self._values: dict[Hashable, Gist] = {}
        self._key_locks: dict[Hashable, threading.Lock] = {}

    def get_or_compute(self, key: Hashable, compute: Callable[[], Gist]) -> Gist:
        with self._lock:
            if key in self._values:
                return self._values[key]
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                if key in self._values:
                    return self._values[key]
            value = compute()
            with self._lock:
                self._values[key] = value
            return value

    def __contains__(self, key):
        with self._lock:
            return key in self._values


# -- extraction ----------------------------------------------------------------


def _ask(provider, templates, name, schema_id, temperature, **slots) -> Gist:
    system, user = templates[name].render(**slots)
    request = ChatRequest(system, user, temperature=temperature, tag=name)
    try:
        return ask_structured(provider, request, lambda text: parse_structured_gist(text, schema_id))
    except RepairFailed as exc:
        raise GistError(str(exc), exc.responses, exc.errors) from exc


def render_event_input(ctx: Union[EventContext, str]) -> str:
    """Event context as JSON, or raw text unchanged when schema construction is skipped."""
    if isinstance(ctx, EventContext):
        return render_json(ctx.to_dict())
    return str(ctx).strip()


def extract_pattern_gist(
    history: UserHistory,
    provider: Provider,
    cache: Optional[GistCache] = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    temperature: float = 0.1,
) -> PatternGist:
    if len(history) == 0:
        raise ValueError("history has no trajectories")

    def compute():
        return _ask(
            provider, templates, "pattern_gist", "pattern", temperature,
            long_term=render_trajectories(history.long_term),
            short_term=render_trajectories(history.short_term),
        )

    if cache is None:
        return compute()
    return cache.get_or_compute(("pattern", history.user_id), compute)


def extract_event_gist(
    ctx: Union[EventContext, str],
    provider: Provider,
    cache: Optional[GistCache] = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    temperature: float = 0.1,
) -> EventGist:
    event_text = render_event_input(ctx)

    def compute():
        return _ask(provider, templates, "event_gist", "event", temperature, event_context=event_text)

    if cache is None:
        return compute()
    return cache.get_or_compute(("event", event_text), compute)


def extract_action_gist(
    traj: Trajectory,
    justification: Justification,
    provider: Provider,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    temperature: float = 0.1,
) -> ActionGist:
    check = validate_trajectory(traj)
    if not check.ok:
        raise ValueError("invalid trajectory: " + "; ".join(check.violations))
    return _ask(
        provider, templates, "action_gist", "action", temperature,
        trajectory=render_trajectory(traj),
        justification=justification.text or "(none given)",
    )
