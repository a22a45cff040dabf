"""Raw tier: append-only, partition-stamped store of source extracts.

Layout::

    raw/<source_id>/<as_of>/batch-<hash>.ndjson
    raw/MANIFEST.json

A batch is identified by the SHA-256 of the file bytes, so reloading a
byte-identical extract is a no-op. Records are never rewritten; the
manifest keeps a per-partition digest that ``verify_store`` and ``replay``
check before trusting anything on disk.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterator

from filelock import FileLock

from ._common import (
    DATE_TOKENS,
    IntegrityError,
    ValidationError,
    atomic_write,
    canonical_json,
    load_json,
    parse_date,
    parse_temporal,
    sha256_hex,
)
from .catalog import ENTITY_KINDS

log = logging.getLogger(__name__)

_SOURCE_ID = re.compile(r"[A-Za-z0-9_.-]+")
MAX_DIAGNOSTICS = 50


class BatchRejected(ValidationError):
    """The whole batch was refused; nothing was written."""

    def __init__(self, message: str, diagnostics: list[str]):
        super().__init__(message + ("\n  " + "\n  ".join(diagnostics) if diagnostics else ""))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class RawRecord:
    lineage_id: str
    source_id: str
    entity_kind: str
    payload: tuple[tuple[str, str], ...]
    event_date: str
    ingested_as_of: date
    batch_hash: str
    row: int

    @property
    def partition_key(self) -> tuple[str, date]:
        return (self.source_id, self.ingested_as_of)

    def get(self, name: str, default: str | None = None) -> str | None:
        for k, v in self.payload:
            if k == name:
                return v
        return default

    def to_dict(self) -> dict:
        return {
            "lineage_id": self.lineage_id,
            "source_id": self.source_id,
            "entity_kind": self.entity_kind,
            "payload": [list(kv) for kv in self.payload],
            "event_date": self.event_date,
            "ingested_as_of": self.ingested_as_of.isoformat(),
            "batch_hash": self.batch_hash,
            "row": self.row,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawRecord":
        return cls(
            lineage_id=d["lineage_id"],
            source_id=d["source_id"],
            entity_kind=d["entity_kind"],
            payload=tuple((k, v) for k, v in d["payload"]),
            event_date=d["event_date"],
            ingested_as_of=date.fromisoformat(d["ingested_as_of"]),
            batch_hash=d["batch_hash"],
            row=d["row"],
        )


@dataclass(frozen=True)
class IngestReceipt:
    batch_hash: str
    records_written: int
    partition_key: tuple[str, date]
    duplicate_of: str | None = None


@dataclass(frozen=True)
class BatchInfo:
    batch_hash: str
    source_id: str
    entity_kind: str
    as_of: date
    file: str
    file_sha256: str
    records: int
    seq: int


@dataclass
class StoreReport:
    partitions_checked: int = 0
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def _scalar_to_str(value, line: int, key: str, diagnostics: list[str]) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return json.dumps(value)
    diagnostics.append(f"line {line}: field {key!r} is not a scalar")
    return ""


def parse_extract(data: bytes, fmt: str) -> list[list[tuple[str, str]]]:
    """Parse CSV (header required) or NDJSON into ordered (field, value) rows."""
    diagnostics: list[str] = []
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise BatchRejected("file is not valid UTF-8", [f"byte {exc.start}: {exc.reason}"]) from exc

    rows: list[list[tuple[str, str]]] = []
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text, newline=""), strict=True)
        try:
            header = next(reader, None)
            if not header or all(not h.strip() for h in header):
                raise BatchRejected("CSV header row is required", ["line 1: empty header"])
            dupes = {h for h in header if header.count(h) > 1}
            if dupes:
                raise BatchRejected("duplicate CSV column names", [f"line 1: {sorted(dupes)}"])
            for values in reader:
                if not values:
                    continue
                if len(values) != len(header):
                    diagnostics.append(
                        f"line {reader.line_num}: expected {len(header)} fields, got {len(values)}"
                    )
                    continue
                rows.append(list(zip(header, values)))
        except csv.Error as exc:
            diagnostics.append(f"line {reader.line_num}: {exc}")
    elif fmt == "ndjson":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                diagnostics.append(f"line {lineno}: {exc.msg} (col {exc.colno})")
                continue
            if not isinstance(obj, dict):
                diagnostics.append(f"line {lineno}: expected a JSON object")
                continue
            rows.append([(k, _scalar_to_str(v, lineno, k, diagnostics)) for k, v in obj.items()])
    else:
        raise ValidationError(f"unsupported format {fmt!r}; expected csv or ndjson")

    if diagnostics:
        raise BatchRejected("unparseable extract", diagnostics[:MAX_DIAGNOSTICS])
    return rows


def _format_for(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".ndjson", ".jsonl", ".json"):
        return "ndjson"
    raise ValidationError(f"cannot infer format of {path.name}; pass fmt='csv' or 'ndjson'")


def _date_parses(value: str) -> bool:
    return any(parse_temporal(value, fmt) is not None for fmt in DATE_TOKENS)


class RawStore:
    """Append-only raw tier rooted at ``<store>/raw``."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.raw = self.root / "raw"
        self.manifest_path = self.raw / "MANIFEST.json"
        self.raw.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.raw / ".lock"))

    # -- manifest -------------------------------------------------------
    def _load_manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"sequence": 0, "batches": {}, "partitions": {}}
        return load_json(self.manifest_path)

    def batches(self) -> list[BatchInfo]:
        """All batches in load order."""
        m = self._load_manifest()
        out = [
            BatchInfo(
                batch_hash=h,
                source_id=b["source_id"],
                entity_kind=b["entity_kind"],
                as_of=date.fromisoformat(b["as_of"]),
                file=b["file"],
                file_sha256=b["file_sha256"],
                records=b["records"],
                seq=b["seq"],
            )
            for h, b in m["batches"].items()
        ]
        return sorted(out, key=lambda b: b.seq)

    def batch_hashes(self) -> set[str]:
        return set(self._load_manifest()["batches"])

    @staticmethod
    def _partition_digest(file_digests: list[str]) -> str:
        return sha256_hex("\n".join(file_digests))

    # -- writes ---------------------------------------------------------
    def load_batch(
        self,
        file: Path | str,
        source_id: str,
        entity_kind: str,
        as_of: date | str,
        fmt: str | None = None,
    ) -> IngestReceipt:
        path = Path(file)
        as_of = parse_date(as_of)
        if not _SOURCE_ID.fullmatch(source_id or ""):
            raise ValidationError(f"invalid source_id {source_id!r}")
        schema = ENTITY_KINDS.get(entity_kind)
        if schema is None:
            raise ValidationError(
                f"unknown entity_kind {entity_kind!r}; expected one of {sorted(ENTITY_KINDS)}"
            )
        data = path.read_bytes()
        batch_hash = sha256_hex(data)
        partition = (source_id, as_of)

        with self._lock:
            manifest = self._load_manifest()
            if batch_hash in manifest["batches"]:
                return IngestReceipt(batch_hash, 0, partition, duplicate_of=batch_hash)

            rows = parse_extract(data, fmt or _format_for(path))
            diagnostics = []
            date_field = schema.date_field
            records = []
            for i, row in enumerate(rows):
                event_date = next((v for k, v in row if k == date_field), "")
                if event_date.strip() and not _date_parses(event_date):
                    diagnostics.append(f"row {i + 1}: {date_field}={event_date!r} is not a date")
                records.append(
                    RawRecord(
                        lineage_id=f"{batch_hash[:16]}-{i:06d}",
                        source_id=source_id,
                        entity_kind=entity_kind,
                        payload=tuple(row),
                        event_date=event_date,
                        ingested_as_of=as_of,
                        batch_hash=batch_hash,
                        row=i,
                    )
                )
            if diagnostics:
                raise BatchRejected("date fields failed to parse", diagnostics[:MAX_DIAGNOSTICS])

            rel = f"{source_id}/{as_of.isoformat()}/batch-{batch_hash}.ndjson"
            body = "".join(canonical_json(r.to_dict()) + "\n" for r in records)
            atomic_write(self.raw / rel, body)

            manifest["sequence"] += 1
            manifest["batches"][batch_hash] = {
                "source_id": source_id,
                "entity_kind": entity_kind,
                "as_of": as_of.isoformat(),
                "file": rel,
                "file_sha256": sha256_hex(body),
                "records": len(records),
                "seq": manifest["sequence"],
            }
            pkey = f"{source_id}/{as_of.isoformat()}"
            part = manifest["partitions"].setdefault(pkey, {"batches": [], "digest": ""})
            part["batches"].append(batch_hash)
            part["digest"] = self._partition_digest(
                [manifest["batches"][h]["file_sha256"] for h in part["batches"]]
            )
            atomic_write(self.manifest_path, json.dumps(manifest, indent=1, sort_keys=True))
        log.info("ingested %d %s rows from %s into %s", len(records), entity_kind, path.name, pkey)
        return IngestReceipt(batch_hash, len(records), partition)

    # -- reads ----------------------------------------------------------
    def _check_partition(self, manifest: dict, pkey: str) -> list[str]:
        part = manifest["partitions"][pkey]
        problems = []
        digests = []
        for h in part["batches"]:
            info = manifest["batches"][h]
            f = self.raw / info["file"]
            if not f.exists():
                problems.append(f"{pkey}: missing file {info['file']}")
                digests.append("")
                continue
            actual = sha256_hex(f.read_bytes())
            digests.append(actual)
            if actual != info["file_sha256"]:
                problems.append(f"{pkey}: digest mismatch in {info['file']}")
        if self._partition_digest(digests) != part["digest"] and not problems:
            problems.append(f"{pkey}: partition digest mismatch")
        return problems

    def verify_store(self) -> StoreReport:
        manifest = self._load_manifest()
        report = StoreReport()
        for pkey in sorted(manifest["partitions"]):
            report.partitions_checked += 1
            problems = self._check_partition(manifest, pkey)
            if problems:
                report.mismatches.append(pkey)
                for p in problems:
                    log.warning(p)
        return report

    def read_batch(self, batch_hash: str) -> list[RawRecord]:
        manifest = self._load_manifest()
        info = manifest["batches"].get(batch_hash)
        if info is None:
            raise ValidationError(f"unknown batch {batch_hash}")
        f = self.raw / info["file"]
        body = f.read_bytes() if f.exists() else b""
        if sha256_hex(body) != info["file_sha256"]:
            pkey = f"{info['source_id']}/{info['as_of']}"
            raise IntegrityError(f"partition {pkey} failed its digest check ({info['file']})")
        return [RawRecord.from_dict(json.loads(line)) for line in body.decode("utf-8").splitlines()]

    def replay(
        self,
        start: date | str | None = None,
        end: date | str | None = None,
        sources: list[str] | None = None,
    ) -> Iterator[RawRecord]:
        """Yield records in (as_of, load order) within an inclusive date range."""
        start = parse_date(start) if start is not None else None
        end = parse_date(end) if end is not None else None
        manifest = self._load_manifest()
        selected = []
        for b in self.batches():
            if start is not None and b.as_of < start:
                continue
            if end is not None and b.as_of > end:
                continue
            if sources is not None and b.source_id not in sources:
                continue
            selected.append(b)
        checked: set[str] = set()
        for b in selected:
            pkey = f"{b.source_id}/{b.as_of.isoformat()}"
            if pkey not in checked:
                problems = self._check_partition(manifest, pkey)
                if problems:
                    raise IntegrityError(f"partition {pkey} failed integrity check: {problems[0]}")
                checked.add(pkey)
        for b in sorted(selected, key=lambda b: (b.as_of, b.seq)):
            yield from self.read_batch(b.batch_hash)
