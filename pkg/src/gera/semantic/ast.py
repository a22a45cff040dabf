"""Syntax tree for metric definitions and predicates."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from typing import Union

Value = Union[str, Decimal, date, bool, None]


@dataclass(frozen=True)
class Field:
    name: str


@dataclass(frozen=True)
class Literal:
    value: Value
    kind: str  # string | number | date | boolean | null


@dataclass(frozen=True)
class Compare:
    op: str  # = != < <= > >=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class InList:
    operand: "Expr"
    values: tuple[Literal, ...]
    negated: bool = False


@dataclass(frozen=True)
class IsNull:
    operand: "Expr"
    negated: bool = False


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


Expr = Union[Field, Literal, Compare, InList, IsNull, And, Or, Not]

AGG_KINDS = ("count", "count_distinct", "sum", "ratio")


@dataclass(frozen=True)
class Aggregation:
    kind: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class Location:
    path: str
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.path}:{self.line}:{self.column}"


@dataclass(frozen=True)
class MetricDefinition:
    name: str
    source: str | None
    agg: Aggregation
    filter: Expr | None = None
    grain: tuple[str, ...] = ()
    # content digest of the canonical text and where it came from; not part of equality
    version: str = field(default="", compare=False)
    location: Location | None = field(default=None, compare=False)

    @property
    def is_ratio(self) -> bool:
        return self.agg.kind == "ratio"

    @property
    def components(self) -> tuple[str, ...]:
        return self.agg.args if self.is_ratio else ()


def walk_fields(expr: Expr | None):
    """Yield every Field node in ``expr``."""
    if expr is None:
        return
    if isinstance(expr, Field):
        yield expr
    elif isinstance(expr, Compare):
        yield from walk_fields(expr.left)
        yield from walk_fields(expr.right)
    elif isinstance(expr, (InList, IsNull, Not)):
        yield from walk_fields(expr.operand)
    elif isinstance(expr, (And, Or)):
        yield from walk_fields(expr.left)
        yield from walk_fields(expr.right)
