from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date
from decimal import Decimal
from typing import Any

from ..catalog import ENTITY_KINDS

PASS = "pass"
QUARANTINED = "quarantined"


@dataclass(frozen=True)
class StagedRecord:
    """A canonicalized record plus its quality verdict."""

    lineage_id: str
    entity_kind: str
    source_id: str
    ingested_as_of: date
    event_date: date | None
    fields: dict[str, Any] = field(hash=False)
    quality: str = PASS
    reason: str | None = None
    batch_seq: int = 0
    row: int = 0

    @property
    def passed(self) -> bool:
        return self.quality == PASS

    @property
    def ingest_order(self) -> tuple:
        return (self.ingested_as_of, self.batch_seq, self.row)

    def get(self, name: str) -> Any:
        if name == "event_date":
            return self.event_date
        return self.fields.get(name)

    def quarantine(self, reason: str) -> "StagedRecord":
        return replace(self, quality=QUARANTINED, reason=reason)

    def to_dict(self) -> dict:
        return {
            "lineage_id": self.lineage_id,
            "entity_kind": self.entity_kind,
            "source_id": self.source_id,
            "ingested_as_of": self.ingested_as_of.isoformat(),
            "event_date": self.event_date.isoformat() if self.event_date else None,
            "fields": {k: _dump(v) for k, v in self.fields.items()},
            "quality": self.quality,
            "reason": self.reason,
            "batch_seq": self.batch_seq,
            "row": self.row,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StagedRecord":
        schema = ENTITY_KINDS[d["entity_kind"]]
        fields = {k: _load(v, schema.fields.get(k, "string")) for k, v in d["fields"].items()}
        return cls(
            lineage_id=d["lineage_id"],
            entity_kind=d["entity_kind"],
            source_id=d["source_id"],
            ingested_as_of=date.fromisoformat(d["ingested_as_of"]),
            event_date=date.fromisoformat(d["event_date"]) if d["event_date"] else None,
            fields=fields,
            quality=d["quality"],
            reason=d["reason"],
            batch_seq=d.get("batch_seq", 0),
            row=d.get("row", 0),
        )


def _dump(v: Any) -> Any:
    if isinstance(v, Decimal):
        return str(v)
    if isinstance(v, date):
        return v.isoformat()
    return v


def _load(v: Any, ftype: str) -> Any:
    if v is None:
        return None
    if ftype == "decimal" and isinstance(v, str):
        return Decimal(v)
    if ftype == "date" and isinstance(v, str):
        return date.fromisoformat(v)
    return v
