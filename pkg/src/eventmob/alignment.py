"""Generate-audit-refine loop producing one event-conditioned trajectory per user-day."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, time, timezone
from typing import Optional, Sequence, Union

from .gists import (
    ActionGist,
    EventGist,
    GistCache,
    Justification,
    PatternGist,
    extract_action_gist,
    extract_event_gist,
    extract_pattern_gist,
    render_event_input,
)
from .model import DEFAULT_TZ, Step, Trajectory, UserHistory, snap_to_time_grid, validate_trajectory
from .prompts import DEFAULT_TEMPLATES, TemplateSet, render_json, render_trajectories, render_trajectory
from .providers import ChatRequest, Provider
from .schema import EventContext
from .structured import RepairFailed, StructuredParseError, ask_structured, extract_json_object

log = logging.getLogger(__name__)

EventInput = Union[EventContext, str]


class GenerationError(RuntimeError):
    """A stage of one user-day run failed; carries the stage name."""

    def __init__(self, stage: str, message: str, responses=()):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.responses = list(responses)


@dataclass(frozen=True)
class AuditVerdict:
    internal_ok: bool
    external_ok: bool
    internal_rationale: str = ""
    external_rationale: str = ""

    def __post_init__(self):
        if not self.internal_ok and not self.internal_rationale.strip():
            raise ValueError("internal_rationale required when internal_ok is false")
        if not self.external_ok and not self.external_rationale.strip():
            raise ValueError("external_rationale required when external_ok is false")

    @property
    def aligned(self) -> bool:
        return self.internal_ok and self.external_ok

    def failures(self) -> list[str]:
        out = []
        if not self.internal_ok:
            out.append(f"internal: {self.internal_rationale}")
        if not self.external_ok:
            out.append(f"external: {self.external_rationale}")
        return out

    def to_dict(self) -> dict:
        return {
            "internal_ok": self.internal_ok,
            "external_ok": self.external_ok,
            "internal_rationale": self.internal_rationale,
            "external_rationale": self.external_rationale,
        }


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 3
    ablate_internal: bool = False
    ablate_external: bool = False
    ablate_event_schema: bool = False
    temperature: float = 0.1
    top_p: float = 1.0
    max_output_tokens: int = 2048

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def single_pass(self) -> bool:
        return self.ablate_internal and self.ablate_external


@dataclass
class GenerationOutcome:
    trajectory: Trajectory
    accepted: bool
    iterations_used: int
    unmet_constraints: list[str] = field(default_factory=list)
    audit_trail: list[AuditVerdict] = field(default_factory=list)
    justification: str = ""

    def to_dict(self) -> dict:
        return {
            "user_id": self.trajectory.user_id,
            "date": self.trajectory.date.isoformat(),
            "accepted": self.accepted,
            "iterations_used": self.iterations_used,
            "unmet_constraints": list(self.unmet_constraints),
            "steps": [step_to_dict(s) for s in self.trajectory.steps],
            "justification": self.justification,
            "audit_trail": [v.to_dict() for v in self.audit_trail],
        }


def step_to_dict(step: Step) -> dict:
    return {
        "time": step.time.isoformat(timespec="minutes"),
        "lat": step.lat,
        "lon": step.lon,
        "category": step.category,
        "subcategory": step.subcategory,
    }


# -- plan parsing --------------------------------------------------------------


def _parse_time(value, day: date, tz: timezone) -> datetime:
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"bad time {value!r}")
    value = value.strip()
    if len(value) <= 5 and ":" in value:
        hh, mm = value.split(":")
        return datetime.combine(day, time(int(hh), int(mm)), tzinfo=tz)
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=tz)
    return ts.astimezone(tz)


def parse_plan(text: str, user_id: str, day: date, tz: timezone = DEFAULT_TZ) -> tuple[Trajectory, Justification]:
    """Turn a plan reply into a snapped, validated trajectory and its justification."""
    obj = extract_json_object(text)
    steps_in = obj.get("steps")
    if steps_in is None:
        steps_in = obj.get("trajectory")
    if not isinstance(steps_in, list):
        raise StructuredParseError("plan: 'steps' must be a list")
    justification = obj.get("justification", "")
    if not isinstance(justification, str):
        raise StructuredParseError("plan: 'justification' must be a string")
    problems, steps = [], []
    for i, raw in enumerate(steps_in):
        if not isinstance(raw, dict):
            problems.append(f"step {i} is not an object")
            continue
        try:
            t = snap_to_time_grid(_parse_time(raw.get("time"), day, tz))
            lat, lon = raw.get("lat"), raw.get("lon")
            if isinstance(lat, bool) or isinstance(lon, bool) or not isinstance(lat, (int, float)) \
                    or not isinstance(lon, (int, float)):
                raise ValueError("lat/lon must be numbers")
            if not (math.isfinite(lat) and math.isfinite(lon) and -90 <= lat <= 90 and -180 <= lon <= 180):
                raise ValueError("lat/lon out of range")
            category, sub = raw.get("category"), raw.get("subcategory")
            if not isinstance(category, str) or not category.strip():
                raise ValueError("category must be a non-empty string")
            if not isinstance(sub, str) or not sub.strip():
                sub = category
            poi = raw.get("poi_id")
            steps.append(Step(t, float(lat), float(lon), category, sub, str(poi) if poi is not None else None))
        except (ValueError, TypeError) as exc:
            problems.append(f"step {i}: {exc}")
    if problems:
        raise StructuredParseError("plan: " + "; ".join(problems), problems)
    traj = Trajectory(user_id, day, tuple(steps))
    check = validate_trajectory(traj)
    if not check.ok:
        raise StructuredParseError("plan: " + "; ".join(check.violations), check.violations)
    return traj, Justification(justification)


def _flag(obj, key):
    value = obj.get(key)
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "yes", "false", "no"):
        return value.strip().lower() in ("true", "yes")
    raise ValueError(f"{key} must be a boolean")


def parse_verdict(text: str, cfg: LoopConfig) -> AuditVerdict:
    obj = extract_json_object(text)
    try:
        internal_ok = True if cfg.ablate_internal else _flag(obj, "internal_ok")
        external_ok = True if cfg.ablate_external else _flag(obj, "external_ok")
        return AuditVerdict(
            internal_ok,
            external_ok,
            "" if cfg.ablate_internal else str(obj.get("internal_rationale") or ""),
            "" if cfg.ablate_external else str(obj.get("external_rationale") or ""),
        )
    except ValueError as exc:
        raise StructuredParseError(f"audit: {exc}") from exc


# -- stages --------------------------------------------------------------------


def _request(cfg: LoopConfig, system: str, user: str, tag: str) -> ChatRequest:
    return ChatRequest(system, user, temperature=cfg.temperature, top_p=cfg.top_p,
                       max_output_tokens=cfg.max_output_tokens, tag=tag)


def _plan_call(provider, request, history, day, tz):
    try:
        return ask_structured(provider, request, lambda text: parse_plan(text, history.user_id, day, tz))
    except RepairFailed as exc:
        raise GenerationError(request.tag, str(exc), exc.responses) from exc


def generate_initial_trajectory(
    history: UserHistory,
    ctx: EventInput,
    provider: Provider,
    day: date,
    cfg: LoopConfig = LoopConfig(),
    templates: TemplateSet = DEFAULT_TEMPLATES,
    tz: timezone = DEFAULT_TZ,
) -> tuple[Trajectory, Justification]:
    if len(history) == 0:
        raise ValueError("history has no trajectories")
    system, user = templates["generate"].render(
        long_term=render_trajectories(history.long_term),
        short_term=render_trajectories(history.short_term),
        event_context=render_event_input(ctx),
        target_date=f"{day.isoformat()} ({day:%A})",
    )
    return _plan_call(provider, _request(cfg, system, user, "generate"), history, day, tz)


def render_feedback(feedback: AuditVerdict) -> str:
    lines = []
    if not feedback.internal_ok:
        lines.append(f"- Conflict with the person's habitual pattern: {feedback.internal_rationale}")
    if not feedback.external_ok:
        lines.append(f"- Conflict with the event situation: {feedback.external_rationale}")
    return "\n".join(lines)


def regenerate_trajectory(
    history: UserHistory,
    ctx: EventInput,
    prev: Trajectory,
    feedback: AuditVerdict,
    provider: Provider,
    cfg: LoopConfig = LoopConfig(),
    templates: TemplateSet = DEFAULT_TEMPLATES,
    tz: timezone = DEFAULT_TZ,
) -> tuple[Trajectory, Justification]:
    if feedback.aligned:
        raise ValueError("regeneration needs a verdict with at least one failed check")
    day = prev.date
    system, user = templates["regenerate"].render(
        long_term=render_trajectories(history.long_term),
        short_term=render_trajectories(history.short_term),
        event_context=render_event_input(ctx),
        target_date=f"{day.isoformat()} ({day:%A})",
        previous_trajectory=render_trajectory(prev),
        feedback=render_feedback(feedback),
    )
    return _plan_call(provider, _request(cfg, system, user, "regenerate"), history, day, tz)


_CRITERIA = {
    "internal": (
        "internal_ok: does the plan read as a coherent expression of this person's habitual "
        "mobility and current tendencies (compare the action gist with the pattern gist)?"
    ),
    "external": (
        "external_ok: is the plan a rational and compliant response to the constraints and "
        "implications of the event (compare the action gist with the event gist)?"
    ),
}


def audit_alignment(
    action: ActionGist,
    pattern: Optional[PatternGist],
    event: Optional[EventGist],
    cfg: LoopConfig,
    provider: Provider,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> AuditVerdict:
    """One "audit" call. An ablated axis is left out of the prompt and passes."""
    refs, criteria, reply = [], [], {}
    if not cfg.ablate_internal:
        if pattern is None:
            raise ValueError("pattern gist required for the internal check")
        refs.append("Pattern gist (habitual routine):\n" + render_json(pattern.to_dict()))
        criteria.append("- " + _CRITERIA["internal"])
        reply.update(internal_ok="true|false", internal_rationale="why; required when false")
    if not cfg.ablate_external:
        if event is None:
            raise ValueError("event gist required for the external check")
        refs.append("Event gist (situation):\n" + render_json(event.to_dict()))
        criteria.append("- " + _CRITERIA["external"])
        reply.update(external_ok="true|false", external_rationale="why; required when false")
    if not criteria:
        return AuditVerdict(True, True)
    system, user = templates["audit"].render(
        action_gist=render_json(action.to_dict()),
        reference_gists="\n\n".join(refs),
        criteria="\n".join(criteria),
        reply_format=render_json(reply),
    )
    request = _request(cfg, system, user, "audit")
    try:
        return ask_structured(provider, request, lambda text: parse_verdict(text, cfg))
    except RepairFailed as exc:
        raise GenerationError("audit", str(exc), exc.responses) from exc


def run_generation_loop(
    history: UserHistory,
    ctx: EventInput,
    cfg: LoopConfig,
    provider: Provider,
    day: date,
    cache: Optional[GistCache] = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    tz: timezone = DEFAULT_TZ,
) -> GenerationOutcome:
    """Generate, audit and refine one user-day for at most ``cfg.max_iterations`` rounds.

    Pattern and event gists are extracted once before the loop (and only for the
    axes that are audited). If no candidate passes both checks, the final
    candidate is kept with ``accepted=False`` and the failed rationales listed
    in ``unmet_constraints``.
    """
    if cache is None:
        cache = GistCache()
    try:
        pattern = None if cfg.ablate_internal else extract_pattern_gist(
            history, provider, cache, templates, cfg.temperature)
        event = None if cfg.ablate_external else extract_event_gist(
            ctx, provider, cache, templates, cfg.temperature)
    except RuntimeError as exc:
        raise GenerationError("gist", str(exc), getattr(exc, "responses", ())) from exc

    trail: list[AuditVerdict] = []
    traj, just, verdict = None, None, None
    for i in range(1, cfg.max_iterations + 1):
        if verdict is None:
            traj, just = generate_initial_trajectory(history, ctx, provider, day, cfg, templates, tz)
        else:
            traj, just = regenerate_trajectory(history, ctx, traj, verdict, provider, cfg, templates, tz)
        if cfg.single_pass:
            verdict = AuditVerdict(True, True)
        else:
            try:
                action = extract_action_gist(traj, just, provider, templates, cfg.temperature)
            except RuntimeError as exc:
                raise GenerationError("action_gist", str(exc), getattr(exc, "responses", ())) from exc
            verdict = audit_alignment(action, pattern, event, cfg, provider, templates)
        trail.append(verdict)
        if verdict.aligned:
            return GenerationOutcome(traj, True, i, [], trail, just.text)
        log.debug("user %s %s: iteration %d rejected: %s", history.user_id, day, i, verdict.failures())
    return GenerationOutcome(traj, False, cfg.max_iterations, verdict.failures(), trail, just.text)


def run_batch(
    histories: Sequence[UserHistory],
    ctx: EventInput,
    cfg: LoopConfig,
    provider: Provider,
    days: Sequence[date],
    max_workers: int = 1,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    tz: timezone = DEFAULT_TZ,
) -> list[dict]:
    """Run every user-day, in parallel up to ``max_workers``.

    Returns one JSON-ready dict per user-day, sorted by (user_id, date). A failed
    user-day yields ``{"user_id", "date", "error": {...}}`` instead of raising.
    """
    cache = GistCache()
    jobs = [(h, d) for h in sorted(histories, key=lambda h: h.user_id) for d in sorted(days)]

    def run(job):
        history, day = job
        try:
            return run_generation_loop(history, ctx, cfg, provider, day, cache, templates, tz).to_dict()
        except Exception as exc:  # one user-day must not sink the batch
            log.error("user %s %s failed: %s", history.user_id, day, exc)
            return {
                "user_id": history.user_id,
                "date": day.isoformat(),
                "error": {"stage": getattr(exc, "stage", type(exc).__name__), "message": str(exc)},
            }

    if max_workers <= 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, jobs))
    return sorted(results, key=lambda r: (r["user_id"], r["date"]))
