"""
Comparing two sets of daily trajectories
========================================

Builds a small "ground truth" and a "generated" set by hand, then walks
through the four distributions, their divergences, the scalar mobility
statistics and active-user scoring.
"""

from datetime import date, datetime, timedelta, timezone

import numpy as np

from eventmob.metrics import (
    BBox,
    GridSpec,
    build_cd_distribution,
    build_sd_distribution,
    build_si_distribution,
    compare,
    jsd,
)
from eventmob.model import Step, Trajectory

JST = timezone(timedelta(hours=9))
DAY = date(2019, 10, 12)
rng = np.random.default_rng(0)
KINDS = [("Retail", "Convenience Store"), ("Dining and Drinking", "Ramen Restaurant"),
         ("Travel & Transport", "Rail Station"), ("Business and Professional Services", "Office")]


def day_of(user, n, spread, kinds):
    slots = np.sort(rng.choice(144, size=n, replace=False))
    steps = []
    for s in slots:
        cat, sub = kinds[int(rng.integers(len(kinds)))]
        when = datetime(DAY.year, DAY.month, DAY.day, tzinfo=JST) + timedelta(minutes=10 * int(s))
        steps.append(Step(when, 35.68 + rng.normal(0, spread), 139.7 + rng.normal(0, spread), cat, sub,
                          f"poi{int(rng.integers(50))}"))
    return Trajectory(user, DAY, tuple(steps))


# Ground truth: busy, spread-out days. Generated: quieter days closer to home,
# roughly what a storm-day model should produce.
truth = [day_of(f"u{i}", int(rng.integers(2, 8)), 0.08, KINDS) for i in range(40)]
generated = [day_of(f"u{i}", int(rng.integers(0, 4)), 0.02, KINDS[:2]) for i in range(40)]

# Step intervals fall into 144 ten-minute bins; show the busiest ones.
si = build_si_distribution(truth)
top = np.argsort(-si.mass)[:5]
print("busiest interval bins (truth):", [(si.labels[i], round(float(si.mass[i]), 3)) for i in top])

# Step distances use log-spaced kilometre bins with underflow and overflow.
sd = build_sd_distribution(generated)
print("generated distance mass below 0.1 km:", round(float(sd.mass[0]), 3))

# Category shares only compare cleanly over a shared label list.
labels = sorted({s.subcategory for t in truth + generated for s in t.steps})
cd_t, cd_g = build_cd_distribution(truth, labels=labels), build_cd_distribution(generated, labels=labels)
for lab, g, t in zip(labels, cd_g.mass, cd_t.mass):
    print(f"  {lab:<18} generated {g:.2f}  truth {t:.2f}")
print("category JSD:", round(jsd(cd_g, cd_t), 4))

# The full comparison: all four divergences, means per user-day and the
# confusion counts for "left home at least once" users.
grid = GridSpec(BBox(35.3, 36.1, 139.3, 140.1), 10)
report = compare(generated, truth, grid)
print("JSD:", {k: round(v, 4) for k, v in report.to_dict()["jsd"].items()})
print("generated:", report.stats_generated.to_dict())
print("truth:    ", report.stats_truth.to_dict())
print("active users:", report.active_users.to_dict())
