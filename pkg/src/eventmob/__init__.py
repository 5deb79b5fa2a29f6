"""Event-conditioned daily mobility generation with a gist-alignment loop, and
distributional evaluation of generated trajectories."""

from .alignment import AuditVerdict, GenerationOutcome, LoopConfig, run_batch, run_generation_loop
from .gists import ActionGist, EventGist, GistCache, Justification, PatternGist, parse_structured_gist
from .ingest import DatasetStats, EventWindow, anonymize_records, dataset_statistics, parse_records, partition_history
from .metrics import BBox, Distribution, GridSpec, MetricReport, MobilityStats, compare, haversine_km, jsd
from .model import CheckIn, GeoPoint, Step, Trajectory, UserHistory, snap_to_time_grid, validate_trajectory
from .providers import CallLedger, ChatRequest, ChatResponse, HTTPProvider, ScriptedProvider, estimate_tokens
from .schema import EventContext, construct_event_context, validate_event_context

__version__ = "0.1.0"

__all__ = [
    "ActionGist",
    "anonymize_records",
    "AuditVerdict",
    "BBox",
    "CallLedger",
    "ChatRequest",
    "ChatResponse",
    "CheckIn",
    "compare",
    "construct_event_context",
    "dataset_statistics",
    "DatasetStats",
    "Distribution",
    "estimate_tokens",
    "EventContext",
    "EventGist",
    "EventWindow",
    "GenerationOutcome",
    "GeoPoint",
    "GistCache",
    "GridSpec",
    "haversine_km",
    "HTTPProvider",
    "jsd",
    "Justification",
    "LoopConfig",
    "MetricReport",
    "MobilityStats",
    "parse_records",
    "parse_structured_gist",
    "partition_history",
    "PatternGist",
    "run_batch",
    "run_generation_loop",
    "ScriptedProvider",
    "snap_to_time_grid",
    "Step",
    "Trajectory",
    "UserHistory",
    "validate_event_context",
    "validate_trajectory",
]
