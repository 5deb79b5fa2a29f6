"""Prompt template loading, placeholder filling and trajectory rendering."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .model import Trajectory

TEMPLATE_NAMES = (
    "schema",
    "pattern_gist",
    "event_gist",
    "action_gist",
    "generate",
    "regenerate",
    "audit",
)
USER_MARKER = "=== user ==="
_SLOT = re.compile(r"\{\{\s*([a-z_]+)\s*\}\}")


@dataclass(frozen=True)
class Template:
    name: str
    system: str
    user: str

    def slots(self) -> set[str]:
        return set(_SLOT.findall(self.system)) | set(_SLOT.findall(self.user))

    def render(self, **values: str) -> tuple[str, str]:
        missing = self.slots() - values.keys()
        if missing:
            raise KeyError(f"template {self.name!r} needs values for: {sorted(missing)}")

        def fill(text):
            return _SLOT.sub(lambda m: str(values[m.group(1)]), text)

        return fill(self.system), fill(self.user)


def parse_template(name: str, text: str) -> Template:
    if USER_MARKER not in text:
        raise ValueError(f"template {name!r} lacks the {USER_MARKER!r} separator")
    system, user = text.split(USER_MARKER, 1)
    return Template(name, system.strip(), user.strip())


class TemplateSet:
    """The versioned prompt files, read from a directory or the packaged defaults."""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[str, Template] = {}

    def __getitem__(self, name: str) -> Template:
        if name not in self._cache:
            if self.directory is not None and (self.directory / f"{name}.txt").exists():
                text = (self.directory / f"{name}.txt").read_text(encoding="utf-8")
            else:
                text = resources.files("eventmob").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
            self._cache[name] = parse_template(name, text)
        return self._cache[name]


DEFAULT_TEMPLATES = TemplateSet()


def format_step_line(step) -> str:
    return f"{step.time:%H:%M}, {step.category}, {step.subcategory}, ({step.lat:.3f}, {step.lon:.3f})"


def render_trajectory(traj: Trajectory) -> str:
    head = f"{traj.date.isoformat()} ({traj.date:%A}):"
    if not traj.steps:
        return head + "\n  (no recorded visits)"
    return "\n".join([head] + ["  " + format_step_line(s) for s in traj.steps])


def render_trajectories(trajs: Iterable[Trajectory]) -> str:
    blocks = [render_trajectory(t) for t in trajs]
    return "\n".join(blocks) if blocks else "(none)"


def render_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False)
