"""
From raw check-ins to per-user histories
========================================

Parses a handful of JSON-lines records (one of them malformed), replaces the
identifiers with keyed surrogates, and splits each user's days into a
long-term and a short-term history before an event.
"""

import io
import json
from datetime import datetime, timedelta, timezone

from eventmob.ingest import anonymize_records, dataset_statistics, parse_records, partition_all, write_records

JST = timezone(timedelta(hours=9))

raw = "\n".join([
    json.dumps({"user_id": "alice", "lat": 35.652, "lon": 139.543, "poi_id": "p1", "subcategory": "Convenience Store",
                "category": "Retail", "timestamp": "2019-09-20T08:03:41+09:00"}),
    json.dumps({"user_id": "alice", "lat": 35.633, "lon": 139.577, "poi_id": "p2", "subcategory": "Rail Station",
                "category": "Travel & Transport", "timestamp": "2019-10-09T18:12:00+09:00"}),
    json.dumps({"user_id": "bob", "lat": 35.700, "lon": 139.700, "poi_id": "p3", "subcategory": "Izakaya",
                "category": "Dining and Drinking", "timestamp": "2019-10-10T20:40:00+09:00"}),
    json.dumps({"user_id": "bob", "lat": 135.0, "lon": 139.7, "poi_id": "p3", "subcategory": "Izakaya",
                "category": "Dining and Drinking", "timestamp": "2019-10-11T20:40:00+09:00"}),
    json.dumps({"user_id": "bob", "lat": 35.700, "lon": 139.700, "poi_id": "p3", "subcategory": "Izakaya",
                "category": "Dining and Drinking", "timestamp": "2019-10-12T13:00:00+09:00"}),
])

# Bad lines are reported with their line number and skipped.
parsed = parse_records(raw, tz=JST)
for skip in parsed.skipped:
    print(f"line {skip.line} skipped: {skip.reason}")

# Surrogates depend on the salt only; seconds are dropped.
records = anonymize_records(parsed.records, salt="demo-salt")
buf = io.StringIO()
write_records(records, buf)
print(buf.getvalue().splitlines()[0])
print("stats:", dataset_statistics(records).to_dict())

# Days that start within the week before the event are short-term; check-ins
# at or after the event start are rejected from the history.
histories = partition_all(records, datetime(2019, 10, 12, tzinfo=JST), timedelta(days=7), JST)
for user, h in histories.items():
    print(user[:8], "long-term days:", [t.date.isoformat() for t in h.long_term],
          "short-term days:", [t.date.isoformat() for t in h.short_term])
