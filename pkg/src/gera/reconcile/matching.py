"""Deterministic, availability-aware matching of one MatchSpec.

Pairing replays the data in the order it became known to the pipeline
(``ingested_as_of``), so the outcome for a date D depends only on records
ingested on or before D. Running day by day or once at the end gives the
same pairs and the same exception lifecycle dates.

Rules, per join-key group:

* a right record pairs with the earliest unpaired left (by event_date,
  lineage_id) whose event_date is not after its own;
* a left that arrives later claims the earliest waiting unpaired right;
* a pair is an on-time match when the right falls inside
  ``[left.event_date, left.event_date + window_days]`` and was known by
  the left's decision date, ``max(expiry + 1, left arrival)``;
* everything else on the left side is pending (decision date not reached)
  or an exception that opened on the decision date, possibly closed later
  as ``matched_late``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta

from .._common import sha256_hex
from ..catalog import ENTITY_KINDS
from ..staging.records import StagedRecord
from .specs import MatchSpec

OPENED, ESCALATED, MATCHED_LATE, RESOLVED_MANUAL, ASSIGNED = (
    "opened", "escalated", "matched_late", "resolved_manual", "assigned",
)
UNMATCHED, ORPHANED, DUPLICATE, INCONSISTENT = "unmatched", "orphaned", "duplicate", "inconsistent"

ONE_DAY = timedelta(days=1)


def exception_id(match_spec: str, lineage_id: str) -> str:
    return "EX-" + sha256_hex(f"{match_spec}|{lineage_id}")[:16]


def natural_key(rec: StagedRecord) -> dict:
    schema = ENTITY_KINDS[rec.entity_kind]
    return {k: _plain(rec.get(k)) for k in schema.natural_key}


def _plain(v):
    if isinstance(v, date):
        return v.isoformat()
    return v if v is None or isinstance(v, (str, int, bool)) else str(v)


def opened_event(
    match_spec: str, rec: StagedRecord, category: str, opened_as_of: date, known_as_of: date,
    counterpart: str | None = None,
) -> dict:
    schema = ENTITY_KINDS[rec.entity_kind]
    ev = {
        "as_of": known_as_of.isoformat(),
        "event": OPENED,
        "exception_id": exception_id(match_spec, rec.lineage_id),
        "match_spec": match_spec,
        "category": category,
        "lineage_id": rec.lineage_id,
        "entity_kind": rec.entity_kind,
        "natural_key": natural_key(rec),
        "event_date": rec.event_date.isoformat() if rec.event_date else None,
        "opened_as_of": opened_as_of.isoformat(),
        "territory": _plain(rec.get(schema.territory_field)),
    }
    if counterpart:
        ev["counterpart_lineage_id"] = counterpart
    return ev


def closed_event(match_spec: str, subject: StagedRecord, counterpart: StagedRecord, when: date, **extra) -> dict:
    return {
        "as_of": when.isoformat(),
        "event": MATCHED_LATE,
        "exception_id": exception_id(match_spec, subject.lineage_id),
        "counterpart_lineage_id": counterpart.lineage_id,
        **extra,
    }


@dataclass
class Pair:
    left: StagedRecord
    right: StagedRecord
    paired_as_of: date


@dataclass
class MatchResult:
    spec: MatchSpec
    as_of: date
    matches: list[Pair] = field(default_factory=list)
    late: list[Pair] = field(default_factory=list)
    inconsistent: list[Pair] = field(default_factory=list)
    left_unmatched: list[StagedRecord] = field(default_factory=list)
    pending: list[StagedRecord] = field(default_factory=list)
    unflagged: list[StagedRecord] = field(default_factory=list)
    right_orphans: list[StagedRecord] = field(default_factory=list)
    duplicates: list[StagedRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    # left lineage -> matched | pending | exception | unflagged
    outcomes: dict[str, str] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        return {
            "matched": len(self.matches),
            "matched_late": len(self.late),
            "inconsistent": len(self.inconsistent),
            "left_unmatched": len(self.left_unmatched),
            "pending": len(self.pending),
            "unflagged": len(self.unflagged),
            "right_orphans": len(self.right_orphans),
            "duplicates": len(self.duplicates),
        }


def _key(rec: StagedRecord, fields: tuple[str, ...]):
    values = tuple(rec.get(f) for f in fields)
    return None if any(v is None for v in values) else values


def run_match(
    spec: MatchSpec,
    lefts: list[StagedRecord],
    rights: list[StagedRecord],
    as_of: date,
) -> MatchResult:
    """Match ``lefts`` against ``rights`` as known on ``as_of``.

    Both sides should already be pass-quality and deduplicated on their
    natural keys.
    """
    result = MatchResult(spec, as_of)
    window = timedelta(days=spec.window_days)
    lefts = [r for r in lefts if r.ingested_as_of <= as_of and r.event_date is not None]
    rights = [r for r in rights if r.ingested_as_of <= as_of and r.event_date is not None]

    groups: dict[object, tuple[list, list]] = defaultdict(lambda: ([], []))
    for rec in lefts:
        k = _key(rec, spec.keys)
        groups[("L", rec.lineage_id) if k is None else k][0].append(rec)
    for rec in rights:
        k = _key(rec, spec.rkeys)
        groups[("R", rec.lineage_id) if k is None else k][1].append(rec)

    partner: dict[str, tuple[StagedRecord, date]] = {}  # left lineage -> (right, paired_as_of)
    right_paired_at: dict[str, tuple[StagedRecord, date]] = {}
    orphan_opened: dict[str, date] = {}
    duplicate_rights: list[StagedRecord] = []

    for key in sorted(groups, key=repr):
        glefts, grights = groups[key]
        _pair_group(glefts, grights, spec, partner, right_paired_at, orphan_opened, duplicate_rights)

    events = result.events
    for left in sorted(lefts, key=lambda r: (r.event_date, r.lineage_id)):
        expiry = left.event_date + window
        decision = max(expiry + ONE_DAY, left.ingested_as_of)
        paired = partner.get(left.lineage_id)
        on_time = (
            paired is not None
            and paired[0].event_date <= expiry
            and paired[1] <= max(expiry, left.ingested_as_of)
        )
        if on_time:
            right, when = paired
            diffs = [c for c in spec.compare if left.get(c) != right.get(c)]
            if diffs:
                result.inconsistent.append(Pair(left, right, when))
                result.outcomes[left.lineage_id] = "exception"
                ev = opened_event(spec.name, left, INCONSISTENT, when, when, counterpart=right.lineage_id)
                ev["fields"] = diffs
                events.append(ev)
            else:
                result.matches.append(Pair(left, right, when))
                result.outcomes[left.lineage_id] = "matched"
            continue
        if decision > as_of:
            result.pending.append(left)
            result.outcomes[left.lineage_id] = "pending"
            continue
        if not spec.flag_unmatched:
            result.unflagged.append(left)
            result.outcomes[left.lineage_id] = "unflagged"
            continue
        result.outcomes[left.lineage_id] = "exception"
        events.append(opened_event(spec.name, left, UNMATCHED, expiry, decision))
        if paired is not None:
            right, when = paired
            closed_at = max(when, decision)
            if closed_at <= as_of:
                result.late.append(Pair(left, right, closed_at))
                extra = {}
                diffs = [c for c in spec.compare if left.get(c) != right.get(c)]
                if diffs:
                    extra["inconsistent_fields"] = diffs
                events.append(closed_event(spec.name, left, right, closed_at, **extra))
                continue
        result.left_unmatched.append(left)

    if spec.flag_orphans:
        for right in sorted(rights, key=lambda r: (r.ingested_as_of, r.event_date, r.lineage_id)):
            opened = orphan_opened.get(right.lineage_id)
            if opened is None:
                continue
            events.append(opened_event(spec.name, right, ORPHANED, opened, opened))
            paired = right_paired_at.get(right.lineage_id)
            if paired is not None:
                events.append(closed_event(spec.name, right, paired[0], paired[1]))
            else:
                result.right_orphans.append(right)

    if spec.flag_duplicates:
        for right in sorted(duplicate_rights, key=lambda r: (r.ingested_as_of, r.event_date, r.lineage_id)):
            result.duplicates.append(right)
            events.append(opened_event(spec.name, right, DUPLICATE, right.ingested_as_of, right.ingested_as_of))

    events.sort(key=event_sort_key)
    return result


def _pair_group(glefts, grights, spec, partner, right_paired_at, orphan_opened, duplicate_rights):
    if not glefts and not grights:
        return
    days = sorted({r.ingested_as_of for r in glefts} | {r.ingested_as_of for r in grights})
    lefts_by_day = defaultdict(list)
    rights_by_day = defaultdict(list)
    for r in glefts:
        lefts_by_day[r.ingested_as_of].append(r)
    for r in grights:
        rights_by_day[r.ingested_as_of].append(r)

    available_lefts: list[StagedRecord] = []
    waiting_rights: list[StagedRecord] = []
    for day in days:
        for left in sorted(lefts_by_day[day], key=lambda r: (r.event_date, r.lineage_id)):
            available_lefts.append(left)
            candidates = [r for r in waiting_rights if r.event_date >= left.event_date]
            if candidates:
                right = min(candidates, key=lambda r: (r.event_date, r.ingested_as_of, r.lineage_id))
                waiting_rights.remove(right)
                partner[left.lineage_id] = (right, day)
                right_paired_at[right.lineage_id] = (left, day)
        for right in sorted(rights_by_day[day], key=lambda r: (r.event_date, r.lineage_id)):
            eligible = [l for l in available_lefts if l.event_date <= right.event_date]
            free = [l for l in eligible if l.lineage_id not in partner]
            if free:
                left = min(free, key=lambda l: (l.event_date, l.lineage_id))
                partner[left.lineage_id] = (right, day)
                right_paired_at[right.lineage_id] = (left, day)
            elif eligible and spec.flag_duplicates:
                duplicate_rights.append(right)
            else:
                waiting_rights.append(right)
                if spec.flag_orphans and not eligible:
                    orphan_opened[right.lineage_id] = day


_EVENT_RANK = {OPENED: 0, ESCALATED: 1, MATCHED_LATE: 2, RESOLVED_MANUAL: 3, ASSIGNED: 4}


def event_sort_key(ev: dict):
    return (ev["as_of"], _EVENT_RANK.get(ev["event"], 9), ev["exception_id"])
