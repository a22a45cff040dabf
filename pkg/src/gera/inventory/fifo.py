"""First-in-first-out lot aging."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from typing import Iterable

from .snapshot import Movement

AGING_BUCKETS = ("0-30", "31-60", "61-90", ">90")


def aging_bucket(age_days: int) -> str:
    # upper bounds are inclusive: a lot exactly 30 days old is still 0-30
    if age_days <= 30:
        return "0-30"
    if age_days <= 60:
        return "31-60"
    if age_days <= 90:
        return "61-90"
    return ">90"


@dataclass(frozen=True)
class Lot:
    received_date: date
    quantity: int
    lineage_id: str = ""


@dataclass(frozen=True)
class LotAllocation:
    material_id: str
    location_id: str
    received_date: date
    remaining_qty: int
    age_days: int
    bucket: str
    lineage_id: str = ""

    def to_dict(self) -> dict:
        return {
            "material_id": self.material_id,
            "location_id": self.location_id,
            "received_date": self.received_date.isoformat(),
            "remaining_qty": self.remaining_qty,
            "age_days": self.age_days,
            "bucket": self.bucket,
            "lineage_id": self.lineage_id,
        }


def fifo_allocate(lots: Iterable[Lot], issued: int) -> list[tuple[Lot, int]] | None:
    """Consume ``issued`` units oldest-first. ``None`` if the lots run out."""
    remaining = issued
    out = []
    for lot in sorted(lots, key=lambda l: (l.received_date, l.lineage_id)):
        take = min(lot.quantity, remaining)
        remaining -= take
        if lot.quantity - take > 0:
            out.append((lot, lot.quantity - take))
    return None if remaining > 0 else out


def fifo_age(
    snapshot_date: date, movements: Iterable[Movement]
) -> tuple[list[LotAllocation], list[tuple[str, str]]]:
    """Allocate on-hand to receipt lots for every key as of ``snapshot_date``.

    Returns ``(allocations, negative_keys)``. Keys whose issuances exceed
    receipts are left out of the allocations and reported separately.
    """
    lots: dict[tuple[str, str], list[Lot]] = defaultdict(list)
    issued: dict[tuple[str, str], int] = defaultdict(int)
    for m in movements:
        if m.effective_date > snapshot_date:
            continue
        if m.quantity > 0:
            lots[m.key].append(Lot(m.event_date, m.quantity, m.lineage_id))
        else:
            issued[m.key] += -m.quantity
    allocations: list[LotAllocation] = []
    negative: list[tuple[str, str]] = []
    for key in sorted(set(lots) | set(issued)):
        alloc = fifo_allocate(lots.get(key, []), issued.get(key, 0))
        if alloc is None:
            negative.append(key)
            continue
        for lot, qty in alloc:
            age = (snapshot_date - lot.received_date).days
            allocations.append(
                LotAllocation(key[0], key[1], lot.received_date, qty, age, aging_bucket(age), lot.lineage_id)
            )
    return allocations, negative


def bucket_totals(allocations: Iterable[LotAllocation]) -> dict[tuple[str, str], dict[str, int]]:
    out: dict[tuple[str, str], dict[str, int]] = {}
    for a in allocations:
        row = out.setdefault((a.material_id, a.location_id), dict.fromkeys(AGING_BUCKETS, 0))
        row[a.bucket] += a.remaining_qty
    return dict(sorted(out.items()))


def aging_report(snapshot_date: date, allocations: list[LotAllocation], negative: list[tuple[str, str]]) -> dict:
    totals = bucket_totals(allocations)
    rows = [
        {"material_id": k[0], "location_id": k[1], **b, "on_hand": sum(b.values())} for k, b in totals.items()
    ]
    grand = {b: sum(r[b] for r in rows) for b in AGING_BUCKETS}
    return {
        "as_of": snapshot_date.isoformat(),
        "rows": rows,
        "totals": grand,
        "over_90": [r for r in rows if r[">90"] > 0],
        "quarantined": [{"material_id": k[0], "location_id": k[1], "reason": "negative_balance"} for k in negative],
    }


def aging_rows(snapshot_date: date, allocations: list[LotAllocation]) -> list[dict]:
    """Flat rows for the ``inventory_aging`` model: one per key and non-empty bucket."""
    out = []
    for (mat, loc), buckets in bucket_totals(allocations).items():
        for b, qty in buckets.items():
            if qty:
                out.append(
                    {"snapshot_date": snapshot_date.isoformat(), "material_id": mat, "location_id": loc, "bucket": b, "quantity": qty}
                )
    return out
