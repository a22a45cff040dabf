"""Exception store: an append-only event log folded into current state.

Events (one JSON object per line in ``recon/exceptions.ndjson``):

    opened          category, opened_as_of, subject lineage and context
    escalated       age crossed the escalation threshold while still open
    matched_late    counterpart arrived after the exception opened
    resolved_manual an analyst closed it with a note
    assigned        owner label changed

Derived events (opened / escalated / matched_late) carry data-determined
dates, so re-deriving them for any as_of produces the same lines and
``sync`` only ever appends the ones not yet present.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import date
from pathlib import Path
from typing import Iterable

from filelock import FileLock

from .._common import IntegrityError, ValidationError, add_days, append_ndjson, days_between, read_ndjson
from .matching import (
    ASSIGNED,
    ESCALATED,
    MATCHED_LATE,
    OPENED,
    RESOLVED_MANUAL,
    event_sort_key,
)
from .specs import DEFAULT_ESCALATION_DAYS

OPEN = "open"
CLOSING = (MATCHED_LATE, RESOLVED_MANUAL)
HISTOGRAM_BUCKETS = ("0-7", "8-14", "15-30", ">30")


@dataclass
class ReconException:
    exception_id: str
    lineage_id: str
    match_spec: str
    category: str
    status: str
    opened_as_of: date
    age_days: int
    escalated: bool
    owner: str | None = None
    was_escalated: bool = False
    closed_as_of: date | None = None
    entity_kind: str = ""
    event_date: date | None = None
    natural_key: dict | None = None
    territory: str | None = None
    counterpart_lineage_id: str | None = None
    note: str | None = None

    @property
    def is_open(self) -> bool:
        return self.status == OPEN

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("opened_as_of", "closed_as_of", "event_date"):
            if d[k] is not None:
                d[k] = d[k].isoformat()
        return d


def histogram_bucket(age: int) -> str:
    if age <= 7:
        return "0-7"
    if age <= 14:
        return "8-14"
    if age <= 30:
        return "15-30"
    return ">30"


def aging_histogram(exceptions: Iterable[ReconException]) -> dict[str, int]:
    hist = dict.fromkeys(HISTOGRAM_BUCKETS, 0)
    for ex in exceptions:
        if ex.is_open:
            hist[histogram_bucket(ex.age_days)] += 1
    return hist


def age_and_escalate(
    exceptions: Iterable[ReconException], as_of: date, escalation_days: int = DEFAULT_ESCALATION_DAYS
) -> tuple[list[ReconException], dict[str, int]]:
    """Recompute age and escalation of open exceptions at ``as_of``."""
    out = []
    for ex in exceptions:
        if ex.is_open:
            if as_of < ex.opened_as_of:
                raise IntegrityError(
                    f"clock regression: as_of {as_of} precedes opened_as_of {ex.opened_as_of} of {ex.exception_id}"
                )
            ex.age_days = days_between(ex.opened_as_of, as_of)
            ex.escalated = ex.age_days >= escalation_days
            ex.was_escalated = ex.was_escalated or ex.escalated
        else:
            ex.escalated = False
        out.append(ex)
    return out, aging_histogram(out)


def fold(events: Iterable[dict], as_of: date, escalation_days: int = DEFAULT_ESCALATION_DAYS) -> dict[str, ReconException]:
    """Current state of every exception known on ``as_of``."""
    cutoff = as_of.isoformat()
    visible = sorted((e for e in events if e["as_of"] <= cutoff), key=event_sort_key)
    state: dict[str, ReconException] = {}
    for ev in visible:
        xid = ev["exception_id"]
        kind = ev["event"]
        if kind == OPENED:
            if xid in state:
                continue
            state[xid] = ReconException(
                exception_id=xid,
                lineage_id=ev["lineage_id"],
                match_spec=ev["match_spec"],
                category=ev["category"],
                status=OPEN,
                opened_as_of=date.fromisoformat(ev["opened_as_of"]),
                age_days=0,
                escalated=False,
                entity_kind=ev.get("entity_kind", ""),
                event_date=date.fromisoformat(ev["event_date"]) if ev.get("event_date") else None,
                natural_key=ev.get("natural_key"),
                territory=ev.get("territory"),
                counterpart_lineage_id=ev.get("counterpart_lineage_id"),
            )
            continue
        ex = state.get(xid)
        if ex is None:
            continue
        if kind == ESCALATED and ex.is_open:
            ex.was_escalated = True
        elif kind in CLOSING and ex.is_open:
            ex.status = kind
            ex.closed_as_of = date.fromisoformat(ev["as_of"])
            ex.counterpart_lineage_id = ev.get("counterpart_lineage_id", ex.counterpart_lineage_id)
            ex.note = ev.get("note")
            if ev.get("owner"):
                ex.owner = ev["owner"]
        elif kind == ASSIGNED:
            ex.owner = ev.get("owner")
    for ex in state.values():
        end = ex.closed_as_of or as_of
        ex.age_days = days_between(ex.opened_as_of, max(end, ex.opened_as_of))
        ex.escalated = ex.is_open and ex.age_days >= escalation_days
        ex.was_escalated = ex.was_escalated or ex.escalated
    return state


def derive_escalations(events: list[dict], as_of: date, escalation_days: int = DEFAULT_ESCALATION_DAYS) -> list[dict]:
    """Escalation events implied by ``events`` up to ``as_of``.

    The escalation date is when the age first reaches the threshold (or the
    day the exception became known, if that is later). It is emitted only
    if the exception was still open on that date.
    """
    opened: dict[str, dict] = {}
    closed: dict[str, str] = {}
    for ev in events:
        xid = ev["exception_id"]
        if ev["event"] == OPENED:
            opened.setdefault(xid, ev)
        elif ev["event"] in CLOSING:
            if xid not in closed or ev["as_of"] < closed[xid]:
                closed[xid] = ev["as_of"]
    out = []
    for xid, ev in opened.items():
        when = max(add_days(date.fromisoformat(ev["opened_as_of"]), escalation_days), date.fromisoformat(ev["as_of"]))
        if when > as_of:
            continue
        close = closed.get(xid)
        if close is not None and close <= when.isoformat():
            continue
        out.append({"as_of": when.isoformat(), "event": ESCALATED, "exception_id": xid, "threshold_days": escalation_days})
    return out


class ExceptionStore:
    """``recon/exceptions.ndjson`` guarded by a file lock."""

    def __init__(self, root: Path | str, escalation_days: int = DEFAULT_ESCALATION_DAYS):
        self.root = Path(root)
        self.path = self.root / "recon" / "exceptions.ndjson"
        self.escalation_days = escalation_days
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.lock = FileLock(str(self.path) + ".lock")

    def events(self) -> list[dict]:
        return list(read_ndjson(self.path)) if self.path.exists() else []

    def _append(self, events: list[dict]) -> None:
        append_ndjson(self.path, events)

    def sync(self, derived: list[dict], as_of: date) -> list[dict]:
        """Append derived opened/matched_late events plus implied escalations.

        Returns the events that were new. Running it twice for the same
        inputs appends nothing the second time.
        """
        with self.lock:
            existing = self.events()
            manual_closed = {e["exception_id"] for e in existing if e["event"] == RESOLVED_MANUAL}
            seen = {(e["event"], e["exception_id"]) for e in existing}
            new = []
            for ev in derived:
                if date.fromisoformat(ev["as_of"]) > as_of:
                    continue
                if ev["event"] == MATCHED_LATE and ev["exception_id"] in manual_closed:
                    continue
                key = (ev["event"], ev["exception_id"])
                if key not in seen:
                    seen.add(key)
                    new.append(ev)
            combined = existing + new
            for ev in derive_escalations(combined, as_of, self.escalation_days):
                key = (ev["event"], ev["exception_id"])
                if key not in seen:
                    seen.add(key)
                    new.append(ev)
            new.sort(key=event_sort_key)
            self._append(new)
            return new

    def state(self, as_of: date) -> dict[str, ReconException]:
        return fold(self.events(), as_of, self.escalation_days)

    def list_exceptions(self, as_of: date, status: str | None = None, match_spec: str | None = None) -> list[ReconException]:
        rows = [
            ex
            for ex in self.state(as_of).values()
            if (status is None or ex.status == status) and (match_spec is None or ex.match_spec == match_spec)
        ]
        return sorted(rows, key=lambda x: (x.opened_as_of, x.match_spec, x.exception_id))

    def _current(self, exception_id: str, as_of: date) -> ReconException:
        events = self.events()
        states = fold(events, date.max, self.escalation_days)
        ex = states.get(exception_id)
        if ex is None:
            raise ValidationError(f"unknown exception {exception_id}")
        if as_of < ex.opened_as_of:
            raise IntegrityError(f"clock regression: {as_of} precedes opened_as_of {ex.opened_as_of}")
        return ex

    def resolve_manual(self, exception_id: str, note: str, owner: str | None, as_of: date) -> dict:
        with self.lock:
            ex = self._current(exception_id, as_of)
            if not ex.is_open:
                raise ValidationError(f"exception {exception_id} is already closed (status {ex.status})")
            ev = {"as_of": as_of.isoformat(), "event": RESOLVED_MANUAL, "exception_id": exception_id, "note": note}
            if owner:
                ev["owner"] = owner
            self._append([ev])
            return ev

    def assign(self, exception_id: str, owner: str, as_of: date) -> dict:
        with self.lock:
            self._current(exception_id, as_of)
            ev = {"as_of": as_of.isoformat(), "event": ASSIGNED, "exception_id": exception_id, "owner": owner}
            self._append([ev])
            return ev

    def digest_lines(self) -> str:
        return self.path.read_text(encoding="utf-8") if self.path.exists() else ""


def dump_exceptions(rows: Iterable[ReconException]) -> str:
    return "\n".join(json.dumps(r.to_dict(), sort_keys=True) for r in rows)
