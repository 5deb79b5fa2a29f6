"""Run configuration: one JSON document, defaults below, command-line flags on top."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

from .alignment import LoopConfig
from .ingest import SCENARIOS, parse_timestamp
from .metrics import TRIP_RULES, BBox, GridSpec
from .model import parse_tz
from .providers import DEFAULT_API_KEY_ENV


class ConfigError(ValueError):
    pass


@dataclass
class ProviderSettings:
    kind: str = "http"
    base_url: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_in_flight: int = 4
    timeout_s: float = 120.0
    max_attempts: int = 3
    backoff_s: float = 1.0
    script: Optional[str] = None


@dataclass
class LoopSettings:
    K: int = 3
    ablate_internal: bool = False
    ablate_external: bool = False
    ablate_event_schema: bool = False
    temperature: float = 0.1
    top_p: float = 1.0
    max_output_tokens: int = 2048


@dataclass
class DataSettings:
    timezone: str = "+09:00"
    short_window_days: int = 7
    scenario: Optional[str] = None
    event_start: Optional[str] = None
    target_dates: Optional[list] = None
    bbox: Optional[list] = None
    region_bbox: Optional[list] = None
    min_checkins: int = 0
    grid_size: int = 10
    cd_granularity: str = "subcategory"
    trip_rule: str = "poi_or_cell"
    distance: str = "haversine"


@dataclass
class PathSettings:
    templates_dir: Optional[str] = None
    cache_dir: str = ".eventmob-cache"


@dataclass
class RunConfig:
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    loop: LoopSettings = field(default_factory=LoopSettings)
    data: DataSettings = field(default_factory=DataSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    seed: int = 0
    salt: Optional[str] = None

    # -- derived views --

    @property
    def tz(self) -> timezone:
        return parse_tz(self.data.timezone)

    @property
    def anonymization_salt(self) -> str:
        return self.salt if self.salt is not None else f"seed:{self.seed}"

    def loop_config(self) -> LoopConfig:
        lp = self.loop
        return LoopConfig(lp.K, lp.ablate_internal, lp.ablate_external, lp.ablate_event_schema,
                          lp.temperature, lp.top_p, lp.max_output_tokens)

    def event_start(self) -> datetime:
        if self.data.event_start:
            return parse_timestamp(self.data.event_start, self.tz)
        if self.data.scenario:
            return SCENARIOS[self.data.scenario].event_start.astimezone(self.tz)
        raise ConfigError("missing config key: data.event_start (or data.scenario)")

    def target_dates(self) -> list[date]:
        if self.data.target_dates:
            return [date.fromisoformat(d) for d in self.data.target_dates]
        if self.data.scenario and not self.data.event_start:
            return SCENARIOS[self.data.scenario].event_days
        return [self.event_start().date()]

    @property
    def short_window(self) -> timedelta:
        return timedelta(days=self.data.short_window_days)

    def grid(self) -> Optional[GridSpec]:
        if self.data.bbox is None:
            return None
        return GridSpec(BBox(*map(float, self.data.bbox)), self.data.grid_size)

    def validate(self) -> "RunConfig":
        if self.loop.K < 1:
            raise ConfigError("loop.K must be >= 1")
        if self.data.grid_size < 1:
            raise ConfigError("data.grid_size must be >= 1")
        if self.data.short_window_days < 0:
            raise ConfigError("data.short_window_days must be >= 0")
        if self.provider.kind not in ("http", "scripted"):
            raise ConfigError(f"provider.kind must be http or scripted, got {self.provider.kind!r}")
        if self.provider.max_in_flight < 1:
            raise ConfigError("provider.max_in_flight must be >= 1")
        if self.data.cd_granularity not in ("category", "subcategory"):
            raise ConfigError("data.cd_granularity must be category or subcategory")
        if self.data.trip_rule not in TRIP_RULES:
            raise ConfigError(f"data.trip_rule must be one of {TRIP_RULES}")
        if self.data.distance not in ("haversine", "l2"):
            raise ConfigError("data.distance must be haversine or l2")
        if self.data.scenario is not None and self.data.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.data.scenario!r}; known: {sorted(SCENARIOS)}")
        for key in ("bbox", "region_bbox"):
            box = getattr(self.data, key)
            if box is not None:
                if len(box) != 4:
                    raise ConfigError(f"data.{key} must be [lat_min, lat_max, lon_min, lon_max]")
                try:
                    BBox(*map(float, box))
                except ValueError as exc:
                    raise ConfigError(f"data.{key}: {exc}") from exc
        try:
            self.tz
        except ValueError as exc:
            raise ConfigError(f"data.timezone: {exc}") from exc
        if self.paths.templates_dir and not Path(self.paths.templates_dir).is_dir():
            raise ConfigError(f"paths.templates_dir does not exist: {self.paths.templates_dir}")
        if self.provider.script and not Path(self.provider.script).is_file():
            raise ConfigError(f"provider.script does not exist: {self.provider.script}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"provider": ProviderSettings, "loop": LoopSettings, "data": DataSettings, "paths": PathSettings}


def config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = obj.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
        kwargs[name] = cls(**section)
    for key in ("seed", "salt"):
        if key in obj:
            kwargs[key] = obj[key]
    return RunConfig(**kwargs)


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read ``path`` (optional), apply dotted-key ``overrides``, validate.

    Relative paths inside the file resolve against the file's directory.
    """
    obj: dict = {}
    base = None
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = Path(path).resolve().parent
    cfg = config_from_dict(obj)
    if base is not None:
        if cfg.paths.templates_dir:
            cfg.paths.templates_dir = str(base / cfg.paths.templates_dir)
        if "paths" in obj and "cache_dir" in obj["paths"]:
            cfg.paths.cache_dir = str(base / cfg.paths.cache_dir)
        if cfg.provider.script:
            cfg.provider.script = str(base / cfg.provider.script)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if key:
            setattr(getattr(cfg, section), key, value)
        else:
            setattr(cfg, section, value)
    return cfg.validate()
