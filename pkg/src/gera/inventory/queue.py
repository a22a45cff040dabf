"""Flag persistence, dispositions and the investigation queue."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from pathlib import Path

from filelock import FileLock

from .._common import ValidationError, append_ndjson, read_ndjson
from .detectors import METHODS, AnomalyFlag, json_score

DISPOSITIONS = ("open", "confirmed", "false_positive")


@dataclass
class QueueItem:
    material_id: str
    location_id: str
    snapshot_date: date
    observed: float
    normalized: float
    flags: list[AnomalyFlag]

    def to_dict(self) -> dict:
        return {
            "material_id": self.material_id,
            "location_id": self.location_id,
            "snapshot_date": self.snapshot_date.isoformat(),
            "observed": self.observed,
            "normalized": json_score(self.normalized),
            "methods": [f.method for f in self.flags],
            "flag_ids": [f.flag_id for f in self.flags],
        }


def investigation_queue(flags: list[AnomalyFlag], as_of: date) -> list[QueueItem]:
    """Open flags grouped per (series, date), strongest first, then oldest first."""
    groups: dict[tuple, list[AnomalyFlag]] = {}
    for f in flags:
        if f.snapshot_date <= as_of and f.disposition == "open":
            groups.setdefault((f.material_id, f.location_id, f.snapshot_date), []).append(f)
    items = [
        QueueItem(
            k[0], k[1], k[2], fs[0].observed, max(f.normalized for f in fs),
            sorted(fs, key=lambda f: METHODS.index(f.method)),
        )
        for k, fs in groups.items()
    ]
    items.sort(key=lambda it: (-it.normalized, it.snapshot_date, it.material_id, it.location_id))
    return items


class FlagStore:
    """``inventory/flags.ndjson`` plus a disposition log next to it."""

    def __init__(self, root: Path | str):
        self.dir = Path(root) / "inventory"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "flags.ndjson"
        self.dispositions_path = self.dir / "dispositions.ndjson"
        self.lock = FileLock(str(self.path) + ".lock")

    def _raw(self) -> list[dict]:
        return read_ndjson(self.path) if self.path.exists() else []

    def append_missing(self, flags: list[AnomalyFlag]) -> int:
        with self.lock:
            seen = {d["flag_id"] for d in self._raw()}
            new = [f.to_dict() for f in flags if f.flag_id not in seen]
            return append_ndjson(self.path, new) if new else 0

    def dispositions(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        if self.dispositions_path.exists():
            for d in read_ndjson(self.dispositions_path):
                out[d["flag_id"]] = d
        return out

    def flags(self, as_of: date | None = None) -> list[AnomalyFlag]:
        disp = self.dispositions()
        out = []
        for d in self._raw():
            f = AnomalyFlag.from_dict(d)
            if as_of is not None and f.snapshot_date > as_of:
                continue
            entry = disp.get(f.flag_id)
            if entry and (as_of is None or date.fromisoformat(entry["as_of"]) <= as_of):
                f.disposition = entry["disposition"]
            out.append(f)
        return out

    def set_disposition(self, flag_id: str, disposition: str, note: str, as_of: date) -> dict:
        if disposition not in DISPOSITIONS[1:]:
            raise ValidationError(f"disposition must be one of {list(DISPOSITIONS[1:])}")
        with self.lock:
            if flag_id not in {d["flag_id"] for d in self._raw()}:
                raise ValidationError(f"unknown flag {flag_id}")
            entry = {"as_of": as_of.isoformat(), "flag_id": flag_id, "disposition": disposition, "note": note}
            append_ndjson(self.dispositions_path, [entry])
            return entry
