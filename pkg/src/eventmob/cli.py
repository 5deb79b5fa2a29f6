"""Command-line entry points: ingest, schema, generate, evaluate, report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import date, datetime
from pathlib import Path
from typing import Optional, Sequence

from . import ingest as ing
from .alignment import run_batch
from .config import ConfigError, RunConfig, load_config
from .io import atomic_write_text, dumps_jsonl
from .metrics import MetricError, compare, distributions_csv
from .model import Step, Trajectory, trajectories_from_checkins
from .prompts import TemplateSet
from .providers import HTTPProvider, Provider, ScriptedProvider
from .schema import ASPECTS, EventContext, SchemaConstructionError, cached_event_context

log = logging.getLogger("eventmob")

ABLATIONS = {"ia": "ablate_internal", "ea": "ablate_external", "schema": "ablate_event_schema"}


class CommandError(RuntimeError):
    pass


# -- shared helpers ------------------------------------------------------------


def _ablation_list(values: Optional[Sequence[str]]) -> list[str]:
    out = []
    for v in values or []:
        for part in v.split(","):
            part = part.strip().lower()
            if not part:
                continue
            if part not in ABLATIONS:
                raise ConfigError(f"unknown ablation {part!r}; choose from {sorted(ABLATIONS)}")
            out.append(part)
    return out


def build_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "provider", None):
        overrides["provider.kind"] = args.provider
    if getattr(args, "script", None):
        overrides["provider.script"] = str(Path(args.script).resolve())
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    ablations = _ablation_list(getattr(args, "ablate", None))
    if getattr(args, "ablate_event_schema", False):
        ablations.append("schema")
    for a in ablations:
        overrides[f"loop.{ABLATIONS[a]}"] = True
    return load_config(args.config, overrides)


def build_provider(cfg: RunConfig) -> Provider:
    p = cfg.provider
    if p.kind == "scripted":
        if not p.script:
            raise ConfigError("scripted provider needs --script or provider.script")
        return ScriptedProvider.from_file(p.script)
    if not p.base_url or not p.model:
        raise ConfigError("missing config keys: provider.base_url and provider.model")
    return HTTPProvider(
        p.base_url, p.model, p.api_key_env, max_attempts=p.max_attempts, backoff=p.backoff_s,
        timeout=p.timeout_s, max_in_flight=p.max_in_flight, seed=cfg.seed,
    )


def _templates(cfg: RunConfig) -> TemplateSet:
    return TemplateSet(cfg.paths.templates_dir)


def _read_records(path, cfg: RunConfig) -> list:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc}") from exc
    parsed = ing.parse_records(data, tz=cfg.tz)
    for skip in parsed.skipped:
        log.warning("%s:%d skipped: %s", path, skip.line, skip.reason)
    return parsed.records


def load_event_input(path, cfg: RunConfig, provider: Optional[Provider]):
    """Event file -> EventContext, or raw text when schema construction is ablated.

    Accepts a cached context JSON, a ``{"raw_event_text": ...}`` file written by
    ``schema --ablate schema``, or plain narrative text.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandError(f"cannot read event file {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict) and "raw_event_text" in obj:
        return str(obj["raw_event_text"])
    if isinstance(obj, dict) and any(k in obj for k in ASPECTS):
        if cfg.loop.ablate_event_schema:
            raise ConfigError("schema ablation needs the raw event text, not a structured context")
        return EventContext.from_dict(obj)
    if cfg.loop.ablate_event_schema:
        return text.strip()
    return cached_event_context(text, provider, cfg.paths.cache_dir, _templates(cfg))


def load_trajectories(path, cfg: RunConfig) -> tuple[list[Trajectory], int]:
    """Read generation outcomes or raw check-ins (detected per line) as trajectories.

    Returns the trajectories and the number of failed user-day lines skipped.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc}") from exc
    trajs, raw, failed = [], [], 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if "error" in obj:
            failed += 1
        elif "steps" in obj:
            day = date.fromisoformat(obj["date"])
            steps = tuple(
                Step(datetime.fromisoformat(s["time"]).astimezone(cfg.tz), float(s["lat"]), float(s["lon"]),
                     s["category"], s.get("subcategory") or s["category"], s.get("poi_id"))
                for s in obj["steps"]
            )
            trajs.append(Trajectory(str(obj["user_id"]), day, steps))
        else:
            raw.append(line)
    if raw:
        parsed = ing.parse_records("\n".join(raw), tz=cfg.tz)
        for skip in parsed.skipped:
            log.warning("%s: record skipped: %s", path, skip.reason)
        trajs.extend(trajectories_from_checkins(parsed.records, cfg.tz))
    trajs.sort(key=lambda t: (t.user_id, t.date))
    return trajs, failed


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


# -- subcommands ---------------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig) -> int:
    records = _read_records(args.users, cfg)
    if cfg.data.region_bbox:
        records = ing.filter_bbox(records, cfg.data.region_bbox)
    if cfg.data.min_checkins:
        records = ing.filter_dense_users(records, cfg.data.min_checkins)
    records = ing.anonymize_records(records, cfg.anonymization_salt)
    buf = io.StringIO()
    ing.write_records(records, buf)
    atomic_write_text(args.out, buf.getvalue())
    stats_path = args.stats or str(Path(args.out).with_suffix(".stats.json"))
    atomic_write_text(stats_path, _json_text(ing.dataset_statistics(records).to_dict()))
    return 0


def cmd_schema(args, cfg: RunConfig) -> int:
    try:
        text = Path(args.event).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandError(f"cannot read event file {args.event}: {exc}") from exc
    if cfg.loop.ablate_event_schema:
        atomic_write_text(args.out, _json_text({"raw_event_text": text.strip()}))
        return 0
    ctx = cached_event_context(text, build_provider(cfg), cfg.paths.cache_dir, _templates(cfg))
    atomic_write_text(args.out, ctx.to_json() + "\n")
    return 0


def cmd_generate(args, cfg: RunConfig) -> int:
    provider = build_provider(cfg)
    event = load_event_input(args.event, cfg, provider)
    records = _read_records(args.users, cfg)
    histories = [
        h for h in ing.partition_all(records, cfg.event_start(), cfg.short_window, cfg.tz).values() if len(h)
    ]
    workers = 1 if isinstance(provider, ScriptedProvider) else cfg.provider.max_in_flight
    results = run_batch(histories, event, cfg.loop_config(), provider, cfg.target_dates(),
                        workers, _templates(cfg), cfg.tz)
    atomic_write_text(args.out, dumps_jsonl(results))
    if args.ledger:
        atomic_write_text(args.ledger, _json_text(provider.ledger.to_dict()))
    failed = sum("error" in r for r in results)
    if failed:
        print(json.dumps({"error": "GenerationFailures", "message": f"{failed} of {len(results)} user-days failed"}),
              file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    generated, failed = load_trajectories(args.generated, cfg)
    truth, _ = load_trajectories(args.truth, cfg)
    extra = None
    if args.users:
        pre = _read_records(args.users, cfg)
        extra = ([r.point.lat for r in pre], [r.point.lon for r in pre])
    report = compare(generated, truth, cfg.grid(), cfg.data.cd_granularity, cfg.data.distance,
                     cfg.data.trip_rule, extra)
    out = report.to_dict()
    out["failed_user_days"] = failed
    atomic_write_text(args.out, _json_text(out))
    if args.csv:
        atomic_write_text(args.csv, distributions_csv(report))
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    rows = []
    for path in args.reports:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"cannot read report {path}: {exc}") from exc
        rows.append({"run": Path(path).stem, **{k: obj["jsd"][k] for k in ("si", "sd", "cd", "sgd")}})
    if Path(args.out).suffix.lower() == ".csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["run", "si", "sd", "cd", "sgd"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        atomic_write_text(args.out, buf.getvalue())
    else:
        atomic_write_text(args.out, _json_text({"columns": ["run", "si", "sd", "cd", "sgd"], "rows": rows}))
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventmob", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, provider=False):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="PATH", required=True)
        if provider:
            p.add_argument("--provider", choices=["http", "scripted"])
            p.add_argument("--script", metavar="PATH")
            p.add_argument("--ablate", action="append", metavar="{ia,ea,schema}",
                           help="ablation(s); repeatable or comma-separated")
            p.add_argument("--ablate-event-schema", action="store_true")

    p = sub.add_parser("ingest", help="anonymize check-in records and count them")
    common(p)
    p.add_argument("--users", metavar="PATH", required=True, help="raw check-in JSONL")
    p.add_argument("--stats", metavar="PATH")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("schema", help="build (and cache) the event context")
    common(p, provider=True)
    p.add_argument("--event", metavar="PATH", required=True, help="raw event text")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("generate", help="generate one trajectory per user-day")
    common(p, provider=True)
    p.add_argument("--event", metavar="PATH", required=True)
    p.add_argument("--users", metavar="PATH", required=True, help="pre-event check-in JSONL")
    p.add_argument("--ledger", metavar="PATH", help="write provider call accounting here")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="compare generated trajectories with ground truth")
    common(p)
    p.add_argument("--generated", metavar="PATH", required=True)
    p.add_argument("--truth", metavar="PATH", required=True)
    p.add_argument("--users", metavar="PATH", help="pre-event check-ins, widen the default grid box")
    p.add_argument("--csv", metavar="PATH", help="also write the raw distributions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluation reports into one table")
    common(p)
    p.add_argument("reports", nargs="+", metavar="REPORT")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc)}), file=sys.stderr)
        return 2
    except (CommandError, SchemaConstructionError, MetricError, ing.IngestError, OSError, RuntimeError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
