"""Evaluation distributions (SI, SD, CD, SGD), Jensen-Shannon divergence and mobility statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import GeoPoint, Trajectory

EARTH_RADIUS_KM = 6371.0088
SI_BIN_MINUTES = 10
SI_BINS = 144
SD_LOG_BINS = 30
SD_MIN_KM = 0.1
SD_MAX_KM = 100.0
TOP_CELL_FRACTION = 0.25
_NORM_TOL = 1e-9


class MetricError(ValueError):
    pass


# -- distances -----------------------------------------------------------------


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_km_arrays(a.lat, a.lon, b.lat, b.lon))


def haversine_km_arrays(lat1, lon1, lat2, lon2):
    """Vectorized great-circle distance in km."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def degree_l2_arrays(lat1, lon1, lat2, lon2):
    """Raw Euclidean norm in coordinate degrees (unit-inconsistent; strict mode only)."""
    return np.hypot(np.asarray(lat2) - np.asarray(lat1), np.asarray(lon2) - np.asarray(lon1))


DISTANCES = {"haversine": haversine_km_arrays, "l2": degree_l2_arrays}


# -- distributions -------------------------------------------------------------


@dataclass(frozen=True)
class Distribution:
    labels: tuple
    mass: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "mass", mass)
        if mass.ndim != 1 or len(mass) != len(self.labels):
            raise MetricError("labels and mass differ in length")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise MetricError("mass must be finite and nonnegative")
        total = mass.sum()
        if total != 0 and abs(total - 1.0) > _NORM_TOL:
            raise MetricError(f"mass sums to {total}, not 0 or 1")

    @property
    def empty(self) -> bool:
        return not np.any(self.mass)

    @classmethod
    def from_counts(cls, labels, counts, dropped: int = 0) -> "Distribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        return cls(tuple(labels), counts / total if total > 0 else np.zeros_like(counts), dropped)

    def as_dict(self) -> dict:
        return {str(k): float(v) for k, v in zip(self.labels, self.mass)}


@dataclass
class _Flat:
    """Column view of a trajectory set; pair arrays cover same-day consecutive steps."""

    minutes: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    category: list
    subcategory: list
    poi: list
    day: np.ndarray  # trajectory index of each step
    day_users: list  # user id of each trajectory
    pair_first: np.ndarray

    @property
    def n_days(self) -> int:
        return len(self.day_users)


def _flatten(trajs: Iterable[Trajectory]) -> _Flat:
    trajs = list(trajs)
    steps = [s for t in trajs for s in t.steps]
    n = len(steps)
    lengths = np.fromiter((len(t) for t in trajs), dtype=np.int64, count=len(trajs))
    day = np.repeat(np.arange(len(trajs), dtype=np.int64), lengths)
    return _Flat(
        np.fromiter((s.time.hour * 60 + s.time.minute for s in steps), dtype=float, count=n),
        np.fromiter((s.lat for s in steps), dtype=float, count=n),
        np.fromiter((s.lon for s in steps), dtype=float, count=n),
        [s.category for s in steps],
        [s.subcategory for s in steps],
        [s.poi_id for s in steps],
        day,
        [t.user_id for t in trajs],
        np.flatnonzero(day[:-1] == day[1:]).astype(np.int64),
    )


def _as_flat(trajs) -> _Flat:
    return trajs if isinstance(trajs, _Flat) else _flatten(trajs)


SI_LABELS = tuple(f"[{i * SI_BIN_MINUTES},{(i + 1) * SI_BIN_MINUTES})" for i in range(SI_BINS))


def step_intervals(trajs) -> np.ndarray:
    flat = _as_flat(trajs)
    i = flat.pair_first
    return flat.minutes[i + 1] - flat.minutes[i]


def build_si_distribution(trajs) -> Distribution:
    """Minutes between consecutive same-day steps in 144 ten-minute bins."""
    gaps = step_intervals(trajs)
    idx = np.clip((gaps // SI_BIN_MINUTES).astype(np.int64), 0, SI_BINS - 1)
    return Distribution.from_counts(SI_LABELS, np.bincount(idx, minlength=SI_BINS))


SD_EDGES = np.logspace(math.log10(SD_MIN_KM), math.log10(SD_MAX_KM), SD_LOG_BINS + 1)
SD_LABELS = (
    (f"[0,{SD_MIN_KM:g})",)
    + tuple(f"[{SD_EDGES[i]:.4g},{SD_EDGES[i + 1]:.4g})" for i in range(SD_LOG_BINS))
    + (f">{SD_MAX_KM:g}",)
)


def step_distances(trajs, distance: str = "haversine") -> np.ndarray:
    flat = _as_flat(trajs)
    i = flat.pair_first
    return DISTANCES[distance](flat.lat[i], flat.lon[i], flat.lat[i + 1], flat.lon[i + 1])


def sd_bin_index(dist_km: np.ndarray) -> np.ndarray:
    """0 = underflow (< 0.1 km), 1..30 = log bins (100 km itself in bin 30), 31 = overflow."""
    d = np.asarray(dist_km, dtype=float)
    idx = np.searchsorted(SD_EDGES, d, side="right")
    idx = np.where(d == SD_MAX_KM, SD_LOG_BINS, idx)
    return idx


def build_sd_distribution(trajs, distance: str = "haversine") -> Distribution:
    """Consecutive-step distances: underflow, 30 log-spaced bins over [0.1, 100] km, overflow."""
    idx = sd_bin_index(step_distances(trajs, distance))
    return Distribution.from_counts(SD_LABELS, np.bincount(idx, minlength=SD_LOG_BINS + 2))


def category_labels(trajs, granularity: str = "subcategory") -> list[str]:
    flat = _as_flat(trajs)
    return list(_labels_of(flat, granularity))


def _labels_of(flat: _Flat, granularity: str) -> list:
    if granularity == "subcategory":
        return flat.subcategory
    if granularity == "category":
        return flat.category
    raise MetricError(f"unknown granularity {granularity!r}")


def build_cd_distribution(trajs, granularity: str = "subcategory", labels: Optional[Sequence[str]] = None) -> Distribution:
    """Share of visits per category label.

    ``labels`` fixes the label universe (pass the union of both compared sets);
    by default it is the sorted set of labels present.
    """
    values = _labels_of(_as_flat(trajs), granularity)
    universe = sorted(set(values)) if labels is None else list(labels)
    index = {lab: i for i, lab in enumerate(universe)}
    counts = np.zeros(len(universe))
    for v in values:
        if v not in index:
            raise MetricError(f"label {v!r} outside the given label universe")
        counts[index[v]] += 1
    return Distribution.from_counts(universe, counts)


# -- spatial grid --------------------------------------------------------------


@dataclass(frozen=True)
class BBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise MetricError("degenerate bounding box")

    @classmethod
    def around(cls, lat: np.ndarray, lon: np.ndarray, min_extent: float = 1e-3) -> "BBox":
        """Tight box around the points; a zero-width axis is widened to ``min_extent`` degrees."""
        if len(lat) == 0:
            raise MetricError("no points to bound")
        lo = [float(np.min(lat)), float(np.min(lon))]
        hi = [float(np.max(lat)), float(np.max(lon))]
        for k in (0, 1):
            if hi[k] - lo[k] < min_extent:
                mid = (hi[k] + lo[k]) / 2
                lo[k], hi[k] = mid - min_extent / 2, mid + min_extent / 2
        return cls(lo[0], hi[0], lo[1], hi[1])


@dataclass(frozen=True)
class GridSpec:
    bbox: BBox
    size: int = 10

    def __post_init__(self):
        if self.size < 1:
            raise MetricError("grid size must be >= 1")

    @property
    def n_cells(self) -> int:
        return self.size * self.size

    @property
    def n_retained(self) -> int:
        return math.ceil(TOP_CELL_FRACTION * self.n_cells)

    def cells(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        """Row-major cell index per point (rows along latitude), -1 when outside the box.

        Points on the upper edges are clamped into the last row/column.
        """
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        b, s = self.bbox, self.size
        inside = (lat >= b.lat_min) & (lat <= b.lat_max) & (lon >= b.lon_min) & (lon <= b.lon_max)
        row = np.floor((lat - b.lat_min) / ((b.lat_max - b.lat_min) / s)).astype(np.int64)
        col = np.floor((lon - b.lon_min) / ((b.lon_max - b.lon_min) / s)).astype(np.int64)
        row = np.clip(row, 0, s - 1)
        col = np.clip(col, 0, s - 1)
        return np.where(inside, row * s + col, -1), inside

    def cell_of(self, lat: float, lon: float) -> Optional[tuple[int, int]]:
        idx, _ = self.cells([lat], [lon])
        return None if idx[0] < 0 else divmod(int(idx[0]), self.size)


def cell_counts(trajs, grid: GridSpec) -> tuple[np.ndarray, int]:
    """Visits per cell (flat, row-major) and the number dropped outside the box."""
    flat = _as_flat(trajs)
    idx, inside = grid.cells(flat.lat, flat.lon)
    counts = np.bincount(idx[inside], minlength=grid.n_cells)
    return counts, int((~inside).sum())


def retained_cells(reference_counts: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Indices of the top quarter of cells by reference count; ties go to the lower index."""
    ref = np.asarray(reference_counts).ravel()
    if len(ref) != grid.n_cells:
        raise MetricError("reference counts do not match the grid")
    order = np.argsort(-ref, kind="stable")
    return np.sort(order[: grid.n_retained])


def build_sgd_distribution(trajs, grid: GridSpec, reference_counts: np.ndarray) -> Distribution:
    """Visit shares over the retained cells, renormalized; ``dropped`` counts out-of-box visits."""
    counts, dropped = cell_counts(trajs, grid)
    keep = retained_cells(reference_counts, grid)
    labels = tuple(divmod(int(c), grid.size) for c in keep)
    return Distribution.from_counts(labels, counts[keep], dropped)


# -- divergence ----------------------------------------------------------------


def jsd(p: Distribution, q: Distribution) -> float:
    """Jensen-Shannon divergence with base-2 logs, in [0, 1]."""
    if tuple(p.labels) != tuple(q.labels):
        raise MetricError("distributions have different labels")
    a, b = p.mass, q.mass
    for name, v in (("p", a), ("q", b)):
        if abs(v.sum() - 1.0) > _NORM_TOL:
            raise MetricError(f"{name} is not normalized")
    m = 0.5 * (a + b)
    total = 0.0
    for v in (a, b):
        nz = v > 0
        total += 0.5 * float(np.sum(v[nz] * np.log2(v[nz] / m[nz])))
    return min(max(total, 0.0), 1.0)


def jsd_or_bound(p: Distribution, q: Distribution) -> float:
    """``jsd`` that also accepts empty distributions: 0 if both empty, 1 if one is."""
    if p.empty or q.empty:
        if tuple(p.labels) != tuple(q.labels):
            raise MetricError("distributions have different labels")
        return 0.0 if p.empty and q.empty else 1.0
    return jsd(p, q)


# -- scalar statistics ---------------------------------------------------------


def radius_of_gyration_km(points) -> float:
    """RMS distance to the centroid on a local equirectangular projection."""
    pts = [(p.lat, p.lon) if isinstance(p, GeoPoint) else tuple(p) for p in points]
    if not pts:
        raise MetricError("radius of gyration of no points")
    arr = np.asarray(pts, dtype=float)
    return _rg(arr[:, 0], arr[:, 1])


def _rg(lat: np.ndarray, lon: np.ndarray) -> float:
    lat0 = lat.mean()
    x = np.radians(lon - lon.mean()) * math.cos(math.radians(lat0)) * EARTH_RADIUS_KM
    y = np.radians(lat - lat0) * EARTH_RADIUS_KM
    return float(np.sqrt(np.mean(x * x + y * y)))


@dataclass(frozen=True)
class MobilityStats:
    mean_daily_checkins: float = 0.0
    mean_radius_of_gyration_km: float = 0.0
    mean_total_travel_distance_km: float = 0.0
    mean_daily_activity_duration_hours: float = 0.0
    user_days: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))


def mobility_statistics(trajs, distance: str = "haversine") -> MobilityStats:
    """Means over user-days; a day without visits counts as zero on every measure."""
    flat = _as_flat(trajs)
    n_days = flat.n_days
    if not n_days:
        return MobilityStats()
    day = flat.day
    counts = np.bincount(day, minlength=n_days)
    safe = np.maximum(counts, 1)
    travel = np.bincount(day[flat.pair_first], weights=step_distances(flat, distance), minlength=n_days)

    has = counts > 0
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    duration = np.zeros(n_days)
    duration[has] = (flat.minutes[first[has] + counts[has] - 1] - flat.minutes[first[has]]) / 60.0

    # same projection as _rg, grouped by day
    lat0 = np.bincount(day, weights=flat.lat, minlength=n_days) / safe
    lon0 = np.bincount(day, weights=flat.lon, minlength=n_days) / safe
    x = np.radians(flat.lon - lon0[day]) * np.cos(np.radians(lat0[day])) * EARTH_RADIUS_KM
    y = np.radians(flat.lat - lat0[day]) * EARTH_RADIUS_KM
    rg = np.sqrt(np.bincount(day, weights=x * x + y * y, minlength=n_days) / safe)

    return MobilityStats(
        float(counts.mean()),
        float(rg.mean()),
        float(travel.mean()),
        float(duration.mean()),
        n_days,
    )


# -- active users --------------------------------------------------------------

TRIP_RULES = ("poi_or_cell", "poi", "cell", "any_move")


def _codes(values: list) -> np.ndarray:
    """Integer codes for hashable values; ``None`` maps to -1."""
    table: dict = {}
    return np.asarray([-1 if v is None else table.setdefault(v, len(table)) for v in values], dtype=np.int64)


def active_users(trajs: Iterable[Trajectory], trip_rule: str = "poi_or_cell", grid: Optional[GridSpec] = None) -> dict[str, bool]:
    """Per user: does any day contain a consecutive step pair that counts as a trip?

    poi: both POI ids known and different. cell: different grid cell (or
    different coordinates without a grid). poi_or_cell: either. any_move:
    coordinates or POI id differ.
    """
    if trip_rule not in TRIP_RULES:
        raise MetricError(f"unknown trip rule {trip_rule!r}")
    flat = _as_flat(trajs)
    i = flat.pair_first
    poi = _codes(flat.poi)
    poi_moved = (poi[i] >= 0) & (poi[i + 1] >= 0) & (poi[i] != poi[i + 1])
    coord_moved = (flat.lat[i] != flat.lat[i + 1]) | (flat.lon[i] != flat.lon[i + 1])
    if grid is not None:
        cell, _ = grid.cells(flat.lat, flat.lon)
        cell_moved = cell[i] != cell[i + 1]
    else:
        cell_moved = coord_moved
    moved = {
        "poi": poi_moved,
        "cell": cell_moved,
        "poi_or_cell": poi_moved | cell_moved,
        "any_move": coord_moved | (poi[i] != poi[i + 1]),
    }[trip_rule]
    out = {u: False for u in flat.day_users}
    for d in np.unique(flat.day[i][moved]):
        out[flat.day_users[d]] = True
    return out


@dataclass(frozen=True)
class ActiveUserScores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def score_active(predicted: dict[str, bool], actual: dict[str, bool]) -> ActiveUserScores:
    if set(predicted) != set(actual):
        raise MetricError("generated and ground-truth user sets differ")
    tp = sum(predicted[u] and actual[u] for u in actual)
    fp = sum(predicted[u] and not actual[u] for u in actual)
    fn = sum(not predicted[u] and actual[u] for u in actual)
    tn = len(actual) - tp - fp - fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ActiveUserScores(precision, recall, f1, tp, fp, fn, tn)


def evaluate_active_users(
    generated: Iterable[Trajectory],
    truth: Iterable[Trajectory],
    trip_rule: str = "poi_or_cell",
    grid: Optional[GridSpec] = None,
) -> ActiveUserScores:
    """Precision/recall/F1 for the "active" class (users with at least one trip)."""
    return score_active(active_users(generated, trip_rule, grid), active_users(truth, trip_rule, grid))


# -- full comparison -----------------------------------------------------------


@dataclass
class MetricReport:
    jsd_si: float
    jsd_sd: float
    jsd_cd: float
    jsd_sgd: float
    stats_generated: MobilityStats
    stats_truth: MobilityStats
    dropped_out_of_bbox: int = 0
    empty_distributions: list[str] = field(default_factory=list)
    active_users: Optional[ActiveUserScores] = None
    distributions: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "jsd": {"si": self.jsd_si, "sd": self.jsd_sd, "cd": self.jsd_cd, "sgd": self.jsd_sgd},
            "stats": {"generated": self.stats_generated.to_dict(), "truth": self.stats_truth.to_dict()},
            "active_users": self.active_users.to_dict() if self.active_users else None,
            "dropped_out_of_bbox": self.dropped_out_of_bbox,
            "empty_distributions": list(self.empty_distributions),
        }


def compare(
    generated: Sequence[Trajectory],
    truth: Sequence[Trajectory],
    grid: Optional[GridSpec] = None,
    granularity: str = "subcategory",
    distance: str = "haversine",
    trip_rule: Optional[str] = "poi_or_cell",
    extra_points: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> MetricReport:
    """Compare generated trajectories with ground truth on all four distributions.

    Without ``grid`` a 10x10 grid over the tight box of the truth points (plus
    ``extra_points``, e.g. pre-event visits) is used. Active-user scores are
    added when ``trip_rule`` is set and every truth user was generated; generated
    users absent from truth count as inactive.
    """
    generated, truth = list(generated), list(truth)
    if not generated or not truth:
        raise MetricError("compare needs non-empty generated and truth sets")
    gen, tru = _flatten(generated), _flatten(truth)
    if grid is None:
        lat, lon = tru.lat, tru.lon
        if extra_points is not None:
            lat = np.concatenate([lat, np.asarray(extra_points[0], dtype=float)])
            lon = np.concatenate([lon, np.asarray(extra_points[1], dtype=float)])
        grid = GridSpec(BBox.around(lat, lon))

    pairs = {
        "si": (build_si_distribution(gen), build_si_distribution(tru)),
        "sd": (build_sd_distribution(gen, distance), build_sd_distribution(tru, distance)),
    }
    labels = sorted(set(_labels_of(gen, granularity)) | set(_labels_of(tru, granularity)))
    pairs["cd"] = (build_cd_distribution(gen, granularity, labels), build_cd_distribution(tru, granularity, labels))
    ref, _ = cell_counts(tru, grid)
    pairs["sgd"] = (build_sgd_distribution(gen, grid, ref), build_sgd_distribution(tru, grid, ref))

    scores, empty = {}, []
    for name, (p, q) in pairs.items():
        if p.empty or q.empty:
            empty.append(name)
        scores[name] = jsd_or_bound(p, q)

    active = None
    if trip_rule is not None:
        predicted = active_users(gen, trip_rule, grid)
        actual = active_users(tru, trip_rule, grid)
        # no truth check-ins that day means no trip; a user never generated cannot be scored
        if set(actual) <= set(predicted):
            active = score_active(predicted, {u: actual.get(u, False) for u in predicted})

    return MetricReport(
        scores["si"],
        scores["sd"],
        scores["cd"],
        scores["sgd"],
        mobility_statistics(gen, distance),
        mobility_statistics(tru, distance),
        dropped_out_of_bbox=pairs["sgd"][0].dropped,
        empty_distributions=empty,
        active_users=active,
        distributions=pairs,
    )


def distributions_csv(report: MetricReport) -> str:
    """Long-format CSV (metric, bin, generated, truth) of the compared distributions."""
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "bin", "generated", "truth"])
    for name, (p, q) in report.distributions.items():
        for lab, a, b in zip(p.labels, p.mass, q.mass):
            w.writerow([name, lab if not isinstance(lab, tuple) else f"{lab[0]}:{lab[1]}", repr(float(a)), repr(float(b))])
    return buf.getvalue()
