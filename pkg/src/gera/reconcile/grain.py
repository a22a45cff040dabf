"""Deduplication on natural keys and aggregation to a declared grain."""

from __future__ import annotations

from collections import defaultdict
from decimal import Decimal
from typing import Iterable

from .._common import GeraError
from ..catalog import ENTITY_KINDS
from ..staging.records import StagedRecord
from .matching import DUPLICATE, opened_event
from .specs import GrainSpec


class GrainViolation(GeraError):
    """Aggregated rows are not unique on their grain key."""

    def __init__(self, message: str, keys: list[tuple]):
        super().__init__(message)
        self.keys = keys


def dedup_spec_name(kind: str) -> str:
    return f"dedup:{kind}"


def dedup_records(records: Iterable[StagedRecord]) -> tuple[list[StagedRecord], list[StagedRecord]]:
    """Keep the earliest-ingested record per natural key.

    Returns ``(kept, duplicates)``; both lists are in ingest order.
    """
    kept: dict[tuple, StagedRecord] = {}
    dups: list[StagedRecord] = []
    for rec in sorted(records, key=lambda r: (r.ingest_order, r.lineage_id)):
        nk = ENTITY_KINDS[rec.entity_kind].natural_key
        key = (rec.entity_kind,) + tuple(rec.get(f) for f in nk)
        if any(v is None for v in key[1:]):
            kept[("__nokey__", rec.lineage_id)] = rec
        elif key in kept:
            dups.append(rec)
        else:
            kept[key] = rec
    return list(kept.values()), dups


def duplicate_events(duplicates: Iterable[StagedRecord]) -> list[dict]:
    return [
        opened_event(dedup_spec_name(r.entity_kind), r, DUPLICATE, r.ingested_as_of, r.ingested_as_of)
        for r in duplicates
    ]


def aggregate(records: Iterable[StagedRecord], grain: GrainSpec) -> list[dict]:
    groups: dict[tuple, list[StagedRecord]] = defaultdict(list)
    for rec in records:
        if rec.entity_kind != grain.entity_kind:
            continue
        groups[tuple(rec.get(g) for g in grain.grain)].append(rec)
    rows = []
    for key in sorted(groups, key=repr):
        members = groups[key]
        row = dict(zip(grain.grain, key))
        for out, (agg, fname) in grain.measures.items():
            if agg == "count":
                row[out] = len(members)
                continue
            values = [m.get(fname) for m in members if m.get(fname) is not None]
            if agg == "sum":
                row[out] = sum(values, Decimal(0) if any(isinstance(v, Decimal) for v in values) else 0)
            elif values:
                row[out] = min(values) if agg == "min" else max(values)
            else:
                row[out] = None
        row["lineage_ids"] = sorted(m.lineage_id for m in members)
        rows.append(row)
    assert_unique(rows, grain.grain)
    return rows


def assert_unique(rows: list[dict], keys: tuple[str, ...]) -> None:
    seen: dict[tuple, int] = defaultdict(int)
    for row in rows:
        seen[tuple(row.get(k) for k in keys)] += 1
    bad = sorted((k for k, n in seen.items() if n > 1), key=repr)
    if bad:
        raise GrainViolation(f"grain {list(keys)} is not unique: {bad[:5]}", bad)


def dedup_and_aggregate(records: Iterable[StagedRecord], grain: GrainSpec) -> tuple[list[dict], list[dict]]:
    """Dedup then aggregate. Returns ``(rows, duplicate exception events)``."""
    kept, dups = dedup_records(r for r in records if r.entity_kind == grain.entity_kind)
    return aggregate(kept, grain), duplicate_events(dups)


def grain_join(
    left: list[dict], right: list[dict], keys: tuple[str, ...], right_prefix: str = "right_"
) -> list[dict]:
    """Left join of two grain-unique row sets.

    Both sides must be unique on ``keys``, which rules out fan-out.
    """
    assert_unique(left, keys)
    assert_unique(right, keys)
    index = {tuple(r.get(k) for k in keys): r for r in right}
    out = []
    for row in left:
        joined = dict(row)
        match = index.get(tuple(row.get(k) for k in keys))
        for k, v in (match or {}).items():
            if k not in keys:
                joined[right_prefix + k] = v
        out.append(joined)
    return out
