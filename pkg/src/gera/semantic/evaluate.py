"""Metric evaluation over governed rows.

Rows are filtered by row-level security before any predicate or
aggregation runs, and each top-level evaluation writes exactly one audit
event. Predicates use three-valued logic: a comparison involving null is
unknown, and a filter keeps only rows where it is true.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from typing import Any, Protocol

from ..governance import EMPTY_POLICY_SET, Governance, Principal, filter_rows
from .ast import And, Compare, Expr, Field, InList, IsNull, Literal, MetricDefinition, Not, Or
from .registry import Registry


class DataProvider(Protocol):
    def rows(self, source: str, as_of: date) -> list[dict]: ...

    def versions(self, as_of: date) -> dict[str, list[str]]: ...


def _cmp(op: str, a: Any, b: Any) -> bool | None:
    if a is None or b is None:
        return None
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def eval_value(e: Expr, row: dict) -> Any:
    if isinstance(e, Field):
        return row.get(e.name)
    if isinstance(e, Literal):
        return e.value
    return eval_pred(e, row)


def eval_pred(e: Expr, row: dict) -> bool | None:
    if isinstance(e, (Field, Literal)):
        v = eval_value(e, row)
        return None if v is None else bool(v)
    if isinstance(e, Compare):
        return _cmp(e.op, eval_value(e.left, row), eval_value(e.right, row))
    if isinstance(e, InList):
        v = eval_value(e.operand, row)
        if v is None:
            return None
        hit = any(lit.value == v for lit in e.values if lit.value is not None)
        if hit:
            return not e.negated
        # an unmatched value against a list holding null is unknown
        if any(lit.value is None for lit in e.values):
            return None
        return e.negated
    if isinstance(e, IsNull):
        isnull = eval_value(e.operand, row) is None
        return not isnull if e.negated else isnull
    if isinstance(e, Not):
        v = eval_pred(e.operand, row)
        return None if v is None else not v
    if isinstance(e, And):
        a, b = eval_pred(e.left, row), eval_pred(e.right, row)
        if a is False or b is False:
            return False
        return None if a is None or b is None else True
    if isinstance(e, Or):
        a, b = eval_pred(e.left, row), eval_pred(e.right, row)
        if a is True or b is True:
            return True
        return None if a is None or b is None else False
    raise TypeError(f"not an expression: {e!r}")


def aggregate(d: MetricDefinition, rows: list[dict]) -> Any:
    kind = d.agg.kind
    if kind == "count":
        return len(rows)
    (fname,) = d.agg.args
    values = [r.get(fname) for r in rows if r.get(fname) is not None]
    if kind == "count_distinct":
        return len(set(values))
    if any(isinstance(v, Decimal) for v in values):
        return sum((Decimal(v) for v in values), Decimal(0))
    return sum(values)


def ratio_value(num: Any, den: Any) -> float | None:
    if num is None or den is None or den == 0:
        return None
    return float(round(Decimal(num) / Decimal(den), 10))


def _group_key(row: dict, grain: tuple[str, ...]) -> tuple:
    return tuple(row.get(g) for g in grain)


def _plain(v: Any) -> Any:
    return v.isoformat() if isinstance(v, date) else v


@dataclass
class _Computed:
    value: Any
    groups: dict[tuple, Any] | None
    grain: tuple[str, ...]
    rows_visible: int
    source_systems: set[str]


class Evaluator:
    def __init__(self, registry: Registry, provider: DataProvider, governance: Governance | None = None):
        self.registry = registry
        self.provider = provider
        self.governance = governance

    def _policies(self):
        return self.governance.active() if self.governance else EMPTY_POLICY_SET

    def _compute(self, name: str, as_of: date, principal: Principal, top: str, policies) -> _Computed:
        d = self.registry.get(name)
        if d.is_ratio:
            num = self._compute(d.components[0], as_of, principal, top, policies)
            den = self._compute(d.components[1], as_of, principal, top, policies)
            groups = None
            if num.groups is not None or den.groups is not None:
                keys = sorted(set(num.groups or {}) | set(den.groups or {}), key=repr)
                groups = {k: ratio_value((num.groups or {}).get(k, 0), (den.groups or {}).get(k, 0)) for k in keys}
            return _Computed(
                ratio_value(num.value, den.value), groups, num.grain or den.grain,
                num.rows_visible + den.rows_visible, num.source_systems | den.source_systems,
            )
        rows = self.provider.rows(d.source, as_of)
        objects = {top, name, d.source, *self.registry.entities(name)}
        visible = filter_rows(rows, principal, policies, objects)
        kept = [r for r in visible if d.filter is None or eval_pred(d.filter, r) is True]
        groups = None
        if d.grain:
            buckets: dict[tuple, list[dict]] = {}
            for r in kept:
                buckets.setdefault(_group_key(r, d.grain), []).append(r)
            groups = {k: aggregate(d, rs) for k, rs in sorted(buckets.items(), key=lambda kv: repr(kv[0]))}
        systems = {str(r["source_id"]) for r in kept if r.get("source_id")}
        return _Computed(aggregate(d, kept), groups, d.grain, len(visible), systems)

    def evaluate(self, name: str, as_of: date, principal: Principal, audit: bool = True) -> dict:
        """JSON-ready result: metric, as_of, value, groups?, lineage, definition_digest."""
        d = self.registry.get(name)
        policies = self._policies()
        c = self._compute(name, as_of, principal, name, policies)
        lineage = self.registry.lineage(name)
        lineage["source_systems"] = sorted(c.source_systems)
        lineage["versions"] = self.provider.versions(as_of)
        result = {
            "metric": name,
            "as_of": as_of.isoformat(),
            "value": c.value,
            "lineage": lineage,
            "definition_digest": d.version,
            "principal": principal.to_dict(),
            "policy_version": policies.version,
        }
        if c.groups is not None:
            result["groups"] = [
                {**{g: _plain(v) for g, v in zip(c.grain, k)}, "value": val} for k, val in c.groups.items()
            ]
        if audit and self.governance is not None:
            self.governance.audit.append(
                as_of=as_of,
                principal=principal,
                action="evaluate_metric",
                object_name=name,
                row_count=c.rows_visible,
                policy_version=policies.version,
                detail={"definition_digest": d.version},
            )
        return result


class StaticProvider:
    """In-memory provider for fixtures and tests."""

    def __init__(self, data: dict[str, list[dict]], versions: dict[str, list[str]] | None = None):
        self.data = data
        self._versions = versions or {}

    def rows(self, source: str, as_of: date) -> list[dict]:
        return list(self.data.get(source, []))

    def versions(self, as_of: date) -> dict[str, list[str]]:
        return dict(self._versions)
