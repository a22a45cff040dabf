"""Staged tier persistence and the batch-level staging step.

Layout::

    staged/<entity_kind>/<as_of>/batch-<hash>.ndjson   pass-quality records
    quarantine/<as_of>/batch-<hash>.ndjson             quarantined records
    staged/MANIFEST.json                               per-batch run metadata
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

from .._common import ConfigError, atomic_write, digest_obj, load_json, read_ndjson, write_ndjson
from ..catalog import ENTITY_KINDS
from ..ingest import BatchInfo, RawRecord
from .crosswalk import Crosswalk, load_crosswalks
from .drift import DriftReport, ExpectedSchema, detect_schema_drift
from .quality import QualityAssertionSet
from .records import StagedRecord
from .rules import NormalizationRuleSet, normalize


@dataclass
class StagingConfig:
    rules: NormalizationRuleSet
    crosswalks: dict[str, Crosswalk] = field(default_factory=dict)
    schemas: dict[str, ExpectedSchema] = field(default_factory=dict)
    assertions: QualityAssertionSet = field(default_factory=lambda: QualityAssertionSet([]))
    schemas_version: str = ""

    @classmethod
    def load(cls, config_dir: Path) -> "StagingConfig":
        rules_path = config_dir / "rules.json"
        rules = NormalizationRuleSet.from_dict(load_json(rules_path) if rules_path.exists() else {})
        crosswalks = load_crosswalks(config_dir / "crosswalks")
        missing = rules.crosswalks_used() - set(crosswalks)
        if missing:
            raise ConfigError(f"rules use crosswalks that are not configured: {sorted(missing)}")
        schemas_raw = load_json(config_dir / "schemas.json") if (config_dir / "schemas.json").exists() else {}
        schemas = {k: ExpectedSchema.from_dict(v) for k, v in schemas_raw.get("schemas", {}).items()}
        ap = config_dir / "assertions.json"
        assertions = QualityAssertionSet.from_dict(load_json(ap) if ap.exists() else {})
        return cls(rules, crosswalks, schemas, assertions, digest_obj(schemas_raw))

    def expected_schema(self, source_id: str, kind: str) -> ExpectedSchema:
        return (
            self.schemas.get(f"{source_id}/{kind}")
            or self.schemas.get(f"*/{kind}")
            or ExpectedSchema.default_for(kind, self.rules)
        )

    def versions(self) -> dict[str, str]:
        return {
            "rules": self.rules.version,
            "schemas": self.schemas_version,
            "assertions": self.assertions.version,
            **{f"crosswalk:{n}": cw.version for n, cw in sorted(self.crosswalks.items())},
        }

    @property
    def digest(self) -> str:
        return digest_obj(self.versions())


def normalize_batch(
    raw: list[RawRecord], info: BatchInfo, config: StagingConfig
) -> tuple[list[StagedRecord], DriftReport]:
    """Drift check then per-record normalization. Blocking drift quarantines the batch."""
    columns: list[str] = []
    for r in raw:
        columns.extend(k for k, _ in r.payload)
    drift = DriftReport()
    if raw:
        drift = detect_schema_drift(
            columns, config.expected_schema(info.source_id, info.entity_kind), (dict(r.payload) for r in raw[:50])
        )
    staged = [normalize(r, config.rules, config.crosswalks, batch_seq=info.seq) for r in raw]
    if drift.blocking:
        reason = f"schema_drift:missing:{drift.removed_required[0]}"
        staged = [s.quarantine(reason) for s in staged]
    return staged, drift


class StagedStore:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.staged = self.root / "staged"
        self.quarantine = self.root / "quarantine"
        self.manifest_path = self.staged / "MANIFEST.json"

    def manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"batches": {}}
        return load_json(self.manifest_path)

    def staged_digest(self, batch_hash: str) -> str | None:
        entry = self.manifest()["batches"].get(batch_hash)
        return entry["config_digest"] if entry else None

    def write_batches(self, results: list[tuple[BatchInfo, list[StagedRecord], DriftReport, dict]]) -> None:
        manifest = self.manifest()
        for info, records, drift, versions in results:
            day = info.as_of.isoformat()
            name = f"batch-{info.batch_hash}.ndjson"
            passed = [r for r in records if r.passed]
            quarantined = [r for r in records if not r.passed]
            write_ndjson(self.staged / info.entity_kind / day / name, (r.to_dict() for r in passed))
            qpath = self.quarantine / day / name
            if quarantined:
                write_ndjson(qpath, (r.to_dict() for r in quarantined))
            elif qpath.exists():
                qpath.unlink()
            manifest["batches"][info.batch_hash] = {
                "entity_kind": info.entity_kind,
                "source_id": info.source_id,
                "as_of": day,
                "seq": info.seq,
                "raw": len(records),
                "pass": len(passed),
                "quarantined": len(quarantined),
                "drift": drift.to_dict(),
                "config_digest": digest_obj(versions),
                "versions": versions,
            }
        atomic_write(self.manifest_path, json.dumps(manifest, indent=1, sort_keys=True))

    def _entries(self, through: date | None) -> list[tuple[str, dict]]:
        items = [
            (h, e)
            for h, e in self.manifest()["batches"].items()
            if through is None or date.fromisoformat(e["as_of"]) <= through
        ]
        return sorted(items, key=lambda he: (he[1]["as_of"], he[1]["seq"]))

    def load_pass(self, kinds: Iterable[str] | None = None, through: date | None = None) -> list[StagedRecord]:
        """Pass-quality records ingested on or before ``through``, in ingest order."""
        kinds = set(kinds) if kinds is not None else set(ENTITY_KINDS)
        out: list[StagedRecord] = []
        for h, e in self._entries(through):
            if e["entity_kind"] not in kinds:
                continue
            path = self.staged / e["entity_kind"] / e["as_of"] / f"batch-{h}.ndjson"
            out.extend(StagedRecord.from_dict(d) for d in read_ndjson(path))
        return out

    def load_quarantine(self, through: date | None = None) -> list[StagedRecord]:
        out: list[StagedRecord] = []
        for h, e in self._entries(through):
            if e["quarantined"]:
                out.extend(
                    StagedRecord.from_dict(d)
                    for d in read_ndjson(self.quarantine / e["as_of"] / f"batch-{h}.ndjson")
                )
        return out

    def versions_through(self, through: date) -> dict[str, set[str]]:
        """Config versions in effect for every staged batch up to ``through``."""
        out: dict[str, set[str]] = {}
        for _, e in self._entries(through):
            for k, v in e.get("versions", {}).items():
                out.setdefault(k, set()).add(v)
        return out
