"""Hash-chained, append-only audit log with retention compaction.

Each line of ``audit/log.ndjson`` is the canonical JSON of one event.
``event_hash`` is SHA-256 over ``prev_hash`` followed by the canonical JSON
of every other field of the event (``prev_hash`` included). The first
event chains to ``GENESIS_HASH``. ``audit/MANIFEST.json`` records the tail
sequence and hash so that truncation is detectable too.

Compaction replaces the expired prefix of the log with one
``retention_tombstone`` event. The tombstone chains to ``GENESIS_HASH``
and carries ``segment_tail_hash``, the hash of the last removed event,
which is what the first retained event still points at.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from filelock import FileLock

from .._common import IntegrityError, ValidationError, add_days, atomic_write, canonical_json, sha256_hex
from .policy import Principal

GENESIS_HASH = "0" * 64
DEFAULT_RETENTION_DAYS = 365
TOMBSTONE = "retention_tombstone"
ACTIONS = ("evaluate_metric", "read_report", "read_exceptions", "admin_policy_change", TOMBSTONE)


def compute_hash(event: dict) -> str:
    body = {k: v for k, v in event.items() if k != "event_hash"}
    return sha256_hex(event["prev_hash"] + canonical_json(body))


def link_hash(event: dict) -> str:
    """Hash the next event must point at."""
    if event.get("action") == TOMBSTONE:
        return event["segment_tail_hash"]
    return event["event_hash"]


@dataclass
class VerifyReport:
    ok: bool
    events: int
    broken_at: int | None = None
    reason: str | None = None
    tail_sequence: int = 0

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "events": self.events,
            "broken_at": self.broken_at,
            "reason": self.reason,
            "tail_sequence": self.tail_sequence,
        }


class AuditLog:
    def __init__(self, root: Path | str):
        self.dir = Path(root) / "audit"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "log.ndjson"
        self.manifest_path = self.dir / "MANIFEST.json"
        self.lock = FileLock(str(self.dir / ".lock"))

    # -- reading ---------------------------------------------------------
    def _lines(self) -> list[str]:
        if not self.path.exists():
            return []
        data = self.path.read_bytes().decode("utf-8", errors="replace")
        return [l for l in data.split("\n") if l != ""]

    def events(self) -> list[dict]:
        return [json.loads(l) for l in self._lines()]

    def manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"tail_sequence": 0, "tail_hash": GENESIS_HASH}
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    # -- writing ---------------------------------------------------------
    def _write_manifest(self, seq: int, tail: str) -> None:
        atomic_write(self.manifest_path, json.dumps({"tail_sequence": seq, "tail_hash": tail}, sort_keys=True) + "\n")

    def append(
        self,
        *,
        as_of: date,
        principal: Principal,
        action: str,
        object_name: str,
        row_count: int,
        policy_version: str,
        detail: dict | None = None,
    ) -> dict:
        """Chain and durably write one event; returns it (with its sequence)."""
        if action not in ACTIONS:
            raise ValidationError(f"unknown audit action {action!r}")
        with self.lock:
            m = self.manifest()
            event = {
                "sequence": m["tail_sequence"] + 1,
                "as_of": as_of.isoformat(),
                "principal": principal.to_dict(),
                "action": action,
                "object": object_name,
                "row_count": row_count,
                "policy_version": policy_version,
                "prev_hash": m["tail_hash"],
            }
            if detail:
                event["detail"] = detail
            event["event_hash"] = compute_hash(event)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(canonical_json(event) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._write_manifest(event["sequence"], event["event_hash"])
            return event

    # -- verification ----------------------------------------------------
    def verify(self) -> VerifyReport:
        lines = self._lines()
        expected_prev = GENESIS_HASH
        last_seq = 0
        for i, line in enumerate(lines):
            position = last_seq + 1
            try:
                ev = json.loads(line)
            except json.JSONDecodeError:
                return VerifyReport(False, len(lines), position, "unparseable event", last_seq)
            if not isinstance(ev, dict) or canonical_json(ev) != line:
                return VerifyReport(False, len(lines), position, "event is not in canonical form", last_seq)
            seq = ev.get("sequence")
            if not isinstance(seq, int):
                return VerifyReport(False, len(lines), position, "missing sequence", last_seq)
            is_tombstone = ev.get("action") == TOMBSTONE
            if is_tombstone:
                if i != 0:
                    return VerifyReport(False, len(lines), seq, "tombstone not at head of log", last_seq)
                expected_prev = GENESIS_HASH
            elif seq != last_seq + 1:
                return VerifyReport(False, len(lines), position, f"sequence gap: expected {last_seq + 1}, got {seq}", last_seq)
            if ev.get("prev_hash") != expected_prev:
                return VerifyReport(False, len(lines), seq, "prev_hash does not match predecessor", last_seq)
            if compute_hash(ev) != ev.get("event_hash"):
                return VerifyReport(False, len(lines), seq, "event_hash mismatch", last_seq)
            expected_prev = link_hash(ev)
            last_seq = seq
        m = self.manifest()
        if m["tail_sequence"] != last_seq or m["tail_hash"] != expected_prev:
            return VerifyReport(
                False, len(lines), last_seq + 1 if m["tail_sequence"] > last_seq else last_seq,
                f"manifest tail {m['tail_sequence']} does not match log tail {last_seq}", last_seq,
            )
        return VerifyReport(True, len(lines), None, None, last_seq)

    # -- retention -------------------------------------------------------
    def compact(self, as_of: date, retention_days: int = DEFAULT_RETENTION_DAYS) -> dict | None:
        """Fold events older than ``as_of - retention_days`` into a tombstone.

        Only the leading run of expired events is removed, so the retained
        suffix keeps its original hashes. Returns the tombstone, or ``None`` when nothing had expired.
        """
        if retention_days < 1:
            raise ValidationError("retention_days must be >= 1")
        with self.lock:
            report = self.verify()
            if not report.ok:
                raise IntegrityError(f"refusing to compact: audit chain broken at sequence {report.broken_at}")
            lines = self._lines()
            events = [json.loads(l) for l in lines]
            cutoff = add_days(as_of, -retention_days).isoformat()
            n = 0
            while n < len(events) and events[n]["as_of"] < cutoff:
                n += 1
            if n == 0:
                return None
            removed = events[:n]
            prior = removed[0] if removed[0].get("action") == TOMBSTONE else None
            real = [e for e in removed if e.get("action") != TOMBSTONE]
            tomb = {
                "sequence": removed[-1]["sequence"],
                "as_of": as_of.isoformat(),
                "principal": {"role": "system", "territories": None},
                "action": TOMBSTONE,
                "object": "audit_log",
                "row_count": 0,
                "policy_version": "",
                "prev_hash": GENESIS_HASH,
                "removed_count": len(real) + (prior["removed_count"] if prior else 0),
                "first_sequence": prior["first_sequence"] if prior else removed[0]["sequence"],
                "last_sequence": removed[-1]["sequence"],
                "from_as_of": prior["from_as_of"] if prior else removed[0]["as_of"],
                "to_as_of": removed[-1]["as_of"],
                "segment_hash": sha256_hex("".join(l + "\n" for l in lines[:n])),
                "segment_tail_hash": link_hash(removed[-1]),
            }
            tomb["event_hash"] = compute_hash(tomb)
            kept = [canonical_json(tomb)] + lines[n:]
            atomic_write(self.path, "".join(l + "\n" for l in kept))
            if n == len(events):
                self._write_manifest(tomb["sequence"], link_hash(tomb))
            return tomb
