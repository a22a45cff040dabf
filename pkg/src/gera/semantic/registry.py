"""Type checking and registry validation for metric definitions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .._common import ValidationError
from ..catalog import ENTITY_KINDS, source_schema
from .ast import And, Compare, Expr, Field, InList, IsNull, Literal, MetricDefinition, Not, Or
from .parser import MetricError, MetricTypeError, parse_metrics

# Entity kinds each derived model is computed from.
MODEL_BASES: dict[str, tuple[str, ...]] = {
    "activations": ("provisioning_event",),
    "recon_outcomes": (
        "installation", "invoice_line", "issuance", "payment_settlement", "provisioning_event", "service_order",
    ),
    "inventory_aging": ("inventory_movement", "issuance", "receiving"),
}

_TYPE_CLASS = {"string": "string", "decimal": "number", "integer": "number", "boolean": "boolean", "date": "date"}


class RegistryError(ValidationError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("metric registry invalid:\n  " + "\n  ".join(errors))


def base_entities(source: str) -> tuple[str, ...]:
    if source in ENTITY_KINDS:
        return (source,)
    return MODEL_BASES.get(source, ())


class _Checker:
    def __init__(self, d: MetricDefinition):
        self.d = d
        self.schema = source_schema(d.source) if d.source else None

    def error(self, msg: str) -> MetricTypeError:
        loc = self.d.location
        return MetricTypeError(
            f"metric {self.d.name}: {msg}", loc.line if loc else 0, loc.column if loc else 0,
            path=loc.path if loc else "<text>",
        )

    def field_class(self, name: str) -> str:
        t = self.schema.field_type(name) if self.schema else None
        if t is None:
            raise self.error(f"unknown field {name!r} in source {self.d.source!r}")
        return _TYPE_CLASS[t]

    def type_of(self, e: Expr) -> str:
        if isinstance(e, Field):
            return self.field_class(e.name)
        if isinstance(e, Literal):
            return e.kind
        self.check_bool(e)
        return "boolean"

    def check_bool(self, e: Expr) -> None:
        if isinstance(e, (And, Or)):
            self.check_bool(e.left)
            self.check_bool(e.right)
        elif isinstance(e, Not):
            self.check_bool(e.operand)
        elif isinstance(e, Field):
            if self.field_class(e.name) != "boolean":
                raise self.error(f"field {e.name!r} is {self.field_class(e.name)}, not boolean")
        elif isinstance(e, Literal):
            if e.kind not in ("boolean", "null"):
                raise self.error(f"literal {e.value!r} used as a condition")
        elif isinstance(e, Compare):
            lt, rt = self.type_of(e.left), self.type_of(e.right)
            if "null" in (lt, rt):
                raise self.error("compare with null using 'is null', not an operator")
            if lt != rt:
                raise self.error(f"cannot compare {lt} with {rt} ({_describe(e.left)} {e.op} {_describe(e.right)})")
            if lt == "boolean" and e.op not in ("=", "!="):
                raise self.error(f"operator {e.op} is not defined for booleans")
        elif isinstance(e, InList):
            ot = self.type_of(e.operand)
            for v in e.values:
                if v.kind != ot and v.kind != "null":
                    raise self.error(f"in-list value {v.value!r} is {v.kind}, expected {ot} for {_describe(e.operand)}")
        elif isinstance(e, IsNull):
            self.type_of(e.operand)

    def run(self) -> None:
        d = self.d
        if d.is_ratio:
            if d.source or d.filter is not None:
                raise self.error("ratio metrics take no source or filter; put them on the component metrics")
            return
        if d.source is None:
            raise self.error("missing source")
        if self.schema is None:
            raise self.error(f"unknown source {d.source!r}")
        if d.filter is not None:
            self.check_bool(d.filter)
        if d.agg.kind in ("sum", "count_distinct"):
            (fname,) = d.agg.args
            cls = self.field_class(fname)
            if d.agg.kind == "sum" and cls != "number":
                raise self.error(f"sum({fname}) needs a numeric field but {fname!r} is {cls}")
        for g in d.grain:
            self.field_class(g)


def _describe(e: Expr) -> str:
    return e.name if isinstance(e, Field) else repr(getattr(e, "value", e))


def type_check(d: MetricDefinition) -> None:
    _Checker(d).run()


@dataclass
class Registry:
    metrics: dict[str, MetricDefinition]
    order: list[str] = field(default_factory=list)  # components before the ratios that use them

    def get(self, name: str) -> MetricDefinition:
        if name not in self.metrics:
            raise ValidationError(f"unknown metric {name!r}")
        return self.metrics[name]

    def names(self) -> list[str]:
        return sorted(self.metrics)

    def entities(self, name: str) -> list[str]:
        d = self.get(name)
        if d.is_ratio:
            return sorted({e for c in d.components for e in self.entities(c)})
        return sorted(base_entities(d.source))

    def sources(self, name: str) -> list[str]:
        d = self.get(name)
        if d.is_ratio:
            return sorted({s for c in d.components for s in self.sources(c)})
        return [d.source]

    def lineage(self, name: str) -> dict:
        d = self.get(name)
        out = {
            "metric": name,
            "definition_digest": d.version,
            "sources": self.sources(name),
            "entities": self.entities(name),
        }
        if d.is_ratio:
            out["components"] = [self.lineage(c) for c in d.components]
        return out


def validate_registry(definitions: Iterable[MetricDefinition]) -> Registry:
    """Resolve names, type-check and order the definitions. Collects every error."""
    errors: list[str] = []
    by_name: dict[str, MetricDefinition] = {}
    for d in definitions:
        if d.name in by_name:
            errors.append(
                f"duplicate metric {d.name!r}: defined at {by_name[d.name].location} and at {d.location}"
            )
            continue
        by_name[d.name] = d
    for d in by_name.values():
        try:
            type_check(d)
        except MetricError as exc:
            errors.append(str(exc))
        for c in d.components:
            if c not in by_name:
                errors.append(f"metric {d.name!r} ({d.location}): ratio references unknown metric {c!r}")

    order: list[str] = []
    state: dict[str, int] = {}  # 1 visiting, 2 done

    def visit(name: str, path: list[str]) -> None:
        if state.get(name) == 2 or name not in by_name:
            return
        if state.get(name) == 1:
            cycle = path[path.index(name):] + [name]
            errors.append("ratio cycle: " + " -> ".join(cycle))
            return
        state[name] = 1
        for c in by_name[name].components:
            visit(c, path + [name])
        state[name] = 2
        order.append(name)

    for name in sorted(by_name):
        visit(name, [])
    if errors:
        raise RegistryError(errors)
    return Registry(by_name, order)


def load_definitions(paths: Iterable[Path]) -> list[MetricDefinition]:
    """Parse every ``*.metric`` file under the given directories (sorted by path)."""
    files: list[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.metric")))
        elif p.exists():
            files.append(p)
    defs: list[MetricDefinition] = []
    for f in files:
        defs.extend(parse_metrics(f.read_text(encoding="utf-8"), str(f)))
    return defs


def load_registry(paths: Iterable[Path]) -> Registry:
    return validate_registry(load_definitions(paths))
