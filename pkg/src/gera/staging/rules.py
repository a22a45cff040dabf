"""Declarative per-field normalization rules and the ``normalize`` step.

A rule set maps each entity kind to an ordered rule list per canonical
field. Every failure becomes a quarantine reason on the record; nothing is
dropped and nothing raises at record level.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date, datetime
from decimal import Decimal, InvalidOperation
from typing import Any, Callable
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from .._common import ConfigError, digest_obj, parse_temporal
from ..catalog import ENTITY_KINDS
from ..ingest import RawRecord
from .crosswalk import Crosswalk
from .records import StagedRecord

RULE_KINDS = ("trim", "case_fold", "strip_leading_zeros", "date_parse", "code_map", "crosswalk_lookup")
DEFAULT_DATE_FORMATS = ["YYYY-MM-DD", "ISO8601"]
_INT = re.compile(r"[+-]?\d+")
_TRUE = {"true", "t", "yes", "y", "1"}
_FALSE = {"false", "f", "no", "n", "0"}


class RuleFailure(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class FieldRules:
    name: str
    source: str
    rules: tuple[dict, ...] = ()


@dataclass
class NormalizationRuleSet:
    entities: dict[str, dict[str, FieldRules]]
    timezones: dict[str, str] = field(default_factory=dict)
    version: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationRuleSet":
        entities: dict[str, dict[str, FieldRules]] = {}
        for kind, spec in d.get("entities", {}).items():
            schema = ENTITY_KINDS.get(kind)
            if schema is None:
                raise ConfigError(f"rules reference unknown entity_kind {kind!r}")
            fields = {}
            for name, fspec in spec.get("fields", {}).items():
                if name not in schema.fields:
                    raise ConfigError(f"rules for {kind} reference unknown field {name!r}")
                rules = tuple(fspec.get("rules", ()))
                for r in rules:
                    op = r.get("op")
                    if op not in RULE_KINDS:
                        raise ConfigError(f"{kind}.{name}: unknown rule {op!r}")
                    if op == "date_parse" and not r.get("formats"):
                        raise ConfigError(f"{kind}.{name}: date_parse needs a format list")
                    if op == "crosswalk_lookup" and not r.get("crosswalk"):
                        raise ConfigError(f"{kind}.{name}: crosswalk_lookup needs a crosswalk name")
                fields[name] = FieldRules(name, fspec.get("from", name), rules)
            entities[kind] = fields
        timezones = {}
        for src, sspec in d.get("sources", {}).items():
            tz = sspec.get("timezone", "UTC")
            try:
                ZoneInfo(tz)
            except (ZoneInfoNotFoundError, ValueError) as exc:
                raise ConfigError(f"source {src!r}: unknown timezone {tz!r}") from exc
            timezones[src] = tz
        return cls(entities=entities, timezones=timezones, version=digest_obj(d))

    def field_rules(self, kind: str) -> list[FieldRules]:
        """Rules for every catalog field of ``kind``, in catalog order."""
        schema = ENTITY_KINDS[kind]
        configured = self.entities.get(kind, {})
        out = []
        for name, ftype in schema.fields.items():
            fr = configured.get(name)
            if fr is None:
                default: tuple[dict, ...] = ({"op": "trim"},)
                if ftype == "date":
                    default += ({"op": "date_parse", "formats": DEFAULT_DATE_FORMATS},)
                fr = FieldRules(name, name, default)
            out.append(fr)
        return out

    def crosswalks_used(self) -> set[str]:
        return {
            r["crosswalk"]
            for fields in self.entities.values()
            for fr in fields.values()
            for r in fr.rules
            if r["op"] == "crosswalk_lookup"
        }

    def source_fields(self, kind: str) -> dict[str, str]:
        """Canonical field -> raw column name for ``kind``."""
        return {fr.name: fr.source for fr in self.field_rules(kind)}


# -- individual rules -----------------------------------------------------

def _trim(value: str, rule: dict, ctx: "_Ctx") -> Any:
    return value.strip()


def _case_fold(value: str, rule: dict, ctx: "_Ctx") -> Any:
    return value.upper() if rule.get("mode") == "upper" else value.casefold()


def _strip_leading_zeros(value: str, rule: dict, ctx: "_Ctx") -> Any:
    stripped = value.lstrip("0")
    return stripped if stripped else ("0" if value else value)


def _date_parse(value: Any, rule: dict, ctx: "_Ctx") -> Any:
    if isinstance(value, date):
        return value
    for fmt in rule["formats"]:
        parsed = parse_temporal(value, fmt)
        if parsed is None:
            continue
        if isinstance(parsed, datetime):
            if parsed.tzinfo is not None:
                parsed = parsed.astimezone(ZoneInfo(ctx.timezone))
            return parsed.date()
        return parsed
    raise RuleFailure(f"date_parse:{ctx.field}")


def _code_map(value: str, rule: dict, ctx: "_Ctx") -> Any:
    mapping = rule.get("map", {})
    if value in mapping:
        return mapping[value]
    if rule.get("strict"):
        raise RuleFailure(f"code_map_miss:{ctx.field}")
    return value


def _crosswalk_lookup(value: str, rule: dict, ctx: "_Ctx") -> Any:
    cw = ctx.crosswalks.get(rule["crosswalk"])
    if cw is None:
        raise ConfigError(f"crosswalk {rule['crosswalk']!r} is not loaded")
    ctx.crosswalk_versions[cw.name] = cw.version
    hit = cw.lookup(value)
    if hit is None:
        raise RuleFailure(f"crosswalk_miss:{ctx.field}")
    target = rule.get("target")
    if target:
        ctx.derived[target] = hit
        return value
    return hit


_RULES: dict[str, Callable[[Any, dict, "_Ctx"], Any]] = {
    "trim": _trim,
    "case_fold": _case_fold,
    "strip_leading_zeros": _strip_leading_zeros,
    "date_parse": _date_parse,
    "code_map": _code_map,
    "crosswalk_lookup": _crosswalk_lookup,
}


@dataclass
class _Ctx:
    field: str
    timezone: str
    crosswalks: dict[str, Crosswalk]
    derived: dict[str, Any]
    crosswalk_versions: dict[str, str]


def cast_value(value: Any, ftype: str) -> Any:
    """Cast a normalized value to its catalog type; raises ValueError."""
    if value is None:
        return None
    if ftype == "string":
        return str(value)
    if ftype == "date":
        if isinstance(value, date):
            return value
        return date.fromisoformat(str(value))
    if ftype == "decimal":
        try:
            d = Decimal(str(value).strip())
        except InvalidOperation as exc:
            raise ValueError(value) from exc
        if not d.is_finite():
            raise ValueError(value)
        return d
    if ftype == "integer":
        text = str(value).strip()
        if not _INT.fullmatch(text):
            raise ValueError(value)
        return int(text)
    if ftype == "boolean":
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ValueError(value)
    raise ConfigError(f"unknown field type {ftype!r}")


def normalize(
    raw: RawRecord,
    rules: NormalizationRuleSet,
    crosswalks: dict[str, Crosswalk] | None = None,
    *,
    batch_seq: int = 0,
    versions_out: dict[str, str] | None = None,
) -> StagedRecord:
    """Canonicalize one raw record. Pure given (raw, rules, crosswalk versions)."""
    schema = ENTITY_KINDS[raw.entity_kind]
    crosswalks = crosswalks or {}
    tz = rules.timezones.get(raw.source_id, "UTC")
    payload = dict(raw.payload)
    derived: dict[str, Any] = {}
    versions: dict[str, str] = {}
    values: dict[str, Any] = {}
    reason: str | None = None

    for fr in rules.field_rules(raw.entity_kind):
        raw_value = payload.get(fr.source)
        value: Any = raw_value if raw_value not in (None, "") else derived.get(fr.name)
        ctx = _Ctx(fr.name, tz, crosswalks, derived, versions)
        try:
            for rule in fr.rules:
                if value is None or value == "":
                    break
                value = _RULES[rule["op"]](value, rule, ctx)
            if value == "":
                value = None
            value = cast_value(value, schema.fields[fr.name])
        except RuleFailure as failure:
            reason = failure.reason
            values[fr.name] = value
            break
        except ValueError:
            reason = f"type:{fr.name}"
            values[fr.name] = value
            break
        values[fr.name] = value

    # crosswalk targets that were not themselves configured fields
    for k, v in derived.items():
        values.setdefault(k, v)

    if reason is None:
        for key in schema.key_fields:
            v = values.get(key)
            if v is None:
                reason = f"missing_key:{key}"
                break
            if not schema.valid_format(key, str(v)):
                reason = f"invalid_key:{key}"
                break

    event_date = values.get(schema.date_field) if schema.date_field else None
    if reason is None and event_date is None:
        reason = f"missing_date:{schema.date_field}"
    if versions_out is not None:
        versions_out.update(versions)

    return StagedRecord(
        lineage_id=raw.lineage_id,
        entity_kind=raw.entity_kind,
        source_id=raw.source_id,
        ingested_as_of=raw.ingested_as_of,
        event_date=event_date if isinstance(event_date, date) else None,
        fields=values,
        quality="pass" if reason is None else "quarantined",
        reason=reason,
        batch_seq=batch_seq,
        row=raw.row,
    )
