"""Schema drift detection against a registered expected schema.

Renames are not inferred: a renamed column shows up as one removal plus
one addition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .._common import DATE_TOKENS, ConfigError, parse_temporal
from ..catalog import ENTITY_KINDS
from .rules import NormalizationRuleSet, cast_value


@dataclass(frozen=True)
class ExpectedSchema:
    fields: dict[str, str]  # raw column -> type
    required: frozenset[str]

    @classmethod
    def from_dict(cls, d: dict) -> "ExpectedSchema":
        fields = {}
        required = set()
        for name, spec in d.get("fields", {}).items():
            fields[name] = spec.get("type", "string")
            if spec.get("required"):
                required.add(name)
        return cls(fields, frozenset(required))

    @classmethod
    def default_for(cls, kind: str, rules: NormalizationRuleSet) -> "ExpectedSchema":
        schema = ENTITY_KINDS[kind]
        sources = rules.source_fields(kind)
        required_canon = set(schema.key_fields) | ({schema.date_field} if schema.date_field else set())
        derived = {
            r.get("target")
            for fr in rules.entities.get(kind, {}).values()
            for r in fr.rules
            if r["op"] == "crosswalk_lookup" and r.get("target")
        }
        fields = {sources[c]: t for c, t in schema.fields.items() if c not in derived}
        required = {sources[c] for c in required_canon if c not in derived}
        return cls(fields, frozenset(required))


@dataclass
class DriftReport:
    added: list[str] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    type_changed: list[str] = field(default_factory=list)
    removed_required: list[str] = field(default_factory=list)

    @property
    def blocking(self) -> bool:
        return bool(self.removed_required)

    @property
    def clean(self) -> bool:
        return not (self.added or self.removed or self.type_changed)

    def to_dict(self) -> dict:
        return {
            "added": self.added,
            "removed": self.removed,
            "type_changed": self.type_changed,
            "blocking": self.blocking,
        }


def _value_fits(value: str, ftype: str) -> bool:
    if value.strip() == "":
        return True
    if ftype == "date":
        return any(parse_temporal(value, f) is not None for f in DATE_TOKENS)
    try:
        cast_value(value, ftype)
    except (ValueError, ConfigError):
        return False
    return True


def detect_schema_drift(
    columns: Iterable[str],
    expected: ExpectedSchema,
    sample_rows: Iterable[Mapping[str, str]] = (),
) -> DriftReport:
    columns = list(dict.fromkeys(columns))
    present = set(columns)
    report = DriftReport(
        added=[c for c in columns if c not in expected.fields],
        removed=[c for c in expected.fields if c not in present],
    )
    report.removed_required = [c for c in report.removed if c in expected.required]
    changed = set()
    for row in sample_rows:
        for name, value in row.items():
            ftype = expected.fields.get(name)
            if ftype and ftype != "string" and name not in changed and not _value_fits(value, ftype):
                changed.add(name)
    report.type_changed = [c for c in columns if c in changed]
    return report
