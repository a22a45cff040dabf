"""Record-level quality assertions (not_null, accepted_values, accepted_range, referential)."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Iterable

from .._common import ConfigError, digest_obj, parse_temporal
from ..catalog import ENTITY_KINDS
from .records import StagedRecord

ASSERTION_TYPES = ("not_null", "accepted_values", "accepted_range", "referential")


@dataclass(frozen=True)
class Assertion:
    type: str
    entity_kind: str
    field: str
    values: tuple = ()
    min: Any = None
    max: Any = None
    target_kind: str | None = None
    target_field: str | None = None

    @property
    def name(self) -> str:
        return f"{self.type}:{self.entity_kind}.{self.field}"

    @property
    def reason(self) -> str:
        return f"{self.type}:{self.field}"


@dataclass
class QualityAssertionSet:
    assertions: list[Assertion]
    version: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "QualityAssertionSet":
        out = []
        for spec in d.get("assertions", []):
            kind = spec.get("entity_kind")
            schema = ENTITY_KINDS.get(kind)
            if schema is None:
                raise ConfigError(f"assertion on unknown entity_kind {kind!r}")
            fname = spec.get("field")
            if not schema.has_field(fname):
                raise ConfigError(f"assertion on unknown field {kind}.{fname}")
            atype = spec.get("type")
            if atype not in ASSERTION_TYPES:
                raise ConfigError(f"unknown assertion type {atype!r}")
            target_kind = target_field = None
            if atype == "referential":
                target = spec.get("target", {})
                target_kind, target_field = target.get("entity_kind"), target.get("field")
                tschema = ENTITY_KINDS.get(target_kind)
                if tschema is None:
                    raise ConfigError(f"referential target entity_kind {target_kind!r} is unknown")
                if not tschema.has_field(target_field):
                    raise ConfigError(f"referential target field {target_kind}.{target_field} is unknown")
            ftype = schema.field_type(fname)
            out.append(
                Assertion(
                    type=atype,
                    entity_kind=kind,
                    field=fname,
                    values=tuple(spec.get("values", ())),
                    min=_coerce(spec.get("min"), ftype),
                    max=_coerce(spec.get("max"), ftype),
                    target_kind=target_kind,
                    target_field=target_field,
                )
            )
        return cls(out, version=digest_obj(d))


def _coerce(v: Any, ftype: str | None) -> Any:
    if v is None:
        return None
    if ftype in ("decimal", "integer"):
        return Decimal(str(v))
    if ftype == "date":
        return parse_temporal(str(v), "YYYY-MM-DD")
    return v


@dataclass
class QualityReport:
    evaluated: int = 0
    passed: int = 0
    quarantined: int = 0
    failures: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {
            "evaluated": self.evaluated,
            "passed": self.passed,
            "quarantined": self.quarantined,
            "failures": dict(sorted(self.failures.items())),
        }


def _check(a: Assertion, rec: StagedRecord, refs: dict[tuple[str, str], set]) -> bool:
    value = rec.get(a.field)
    if a.type == "not_null":
        return value is not None and value != ""
    if value is None:
        return True  # nullness is not_null's business
    if a.type == "accepted_values":
        return value in a.values or str(value) in {str(v) for v in a.values}
    if a.type == "accepted_range":
        if a.min is not None and value < a.min:
            return False
        if a.max is not None and value > a.max:
            return False
        return True
    return value in refs[(a.target_kind, a.target_field)]


def apply_assertions(
    records: Iterable[StagedRecord],
    assertions: QualityAssertionSet,
    reference: Iterable[StagedRecord] = (),
) -> tuple[QualityReport, list[StagedRecord]]:
    """Attach a verdict to every record; already-quarantined records pass through.

    Referential assertions look up the target among pass-quality records in
    ``reference`` plus the pass records of the batch itself.
    """
    records = list(records)
    for a in assertions.assertions:
        if a.type == "referential" and a.target_kind not in ENTITY_KINDS:
            raise ConfigError(f"referential target entity_kind {a.target_kind!r} is unknown")
    wanted = {(a.target_kind, a.target_field) for a in assertions.assertions if a.type == "referential"}
    refs: dict[tuple[str, str], set] = {w: set() for w in wanted}
    if wanted:
        for rec in list(reference) + records:
            if not rec.passed:
                continue
            for kind, fname in wanted:
                if rec.entity_kind == kind:
                    v = rec.get(fname)
                    if v is not None:
                        refs[(kind, fname)].add(v)

    by_kind: dict[str, list[Assertion]] = {}
    for a in assertions.assertions:
        by_kind.setdefault(a.entity_kind, []).append(a)

    report = QualityReport()
    out = []
    for rec in records:
        if not rec.passed:
            out.append(rec)
            continue
        report.evaluated += 1
        failed = next((a for a in by_kind.get(rec.entity_kind, ()) if not _check(a, rec, refs)), None)
        if failed is None:
            report.passed += 1
            out.append(rec)
        else:
            report.quarantined += 1
            report.failures[failed.name] += 1
            out.append(rec.quarantine(failed.reason))
    return report, out
