"""Canonical text for definitions; ``parse(print(d)) == d``."""

from __future__ import annotations

import json
from datetime import date
from decimal import Decimal

from .ast import And, Compare, Expr, Field, InList, IsNull, Literal, MetricDefinition, Not, Or

_PREC = {Or: 1, And: 2, Not: 3}


def _prec(e: Expr) -> int:
    return _PREC.get(type(e), 4)


def print_literal(lit: Literal) -> str:
    v = lit.value
    if lit.kind == "null":
        return "null"
    if lit.kind == "boolean":
        return "true" if v else "false"
    if isinstance(v, date):
        return v.isoformat()
    if isinstance(v, Decimal):
        return str(v)
    return json.dumps(v, ensure_ascii=False)


def print_expr(e: Expr) -> str:
    if isinstance(e, Field):
        return e.name
    if isinstance(e, Literal):
        return print_literal(e)
    if isinstance(e, Compare):
        return f"{_operand(e.left)} {e.op} {_operand(e.right)}"
    if isinstance(e, InList):
        kw = "not in" if e.negated else "in"
        return f"{_operand(e.operand)} {kw} ({', '.join(print_literal(v) for v in e.values)})"
    if isinstance(e, IsNull):
        return f"{_operand(e.operand)} is {'not ' if e.negated else ''}null"
    if isinstance(e, Not):
        inner = print_expr(e.operand)
        return f"not {inner}" if _prec(e.operand) >= 3 else f"not ({inner})"
    if isinstance(e, (And, Or)):
        p = _prec(e)
        word = "and" if isinstance(e, And) else "or"
        left = print_expr(e.left)
        right = print_expr(e.right)
        if _prec(e.left) < p:
            left = f"({left})"
        # the grammar is left-associative, so an equal-precedence right child needs parentheses
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {word} {right}"
    raise TypeError(f"not an expression: {e!r}")


def _operand(e: Expr) -> str:
    return print_expr(e) if isinstance(e, (Field, Literal)) else f"({print_expr(e)})"


def print_metric(d: MetricDefinition) -> str:
    clauses = []
    if d.source is not None:
        clauses.append(f"source: {d.source}")
    if d.filter is not None:
        clauses.append(f"filter: {print_expr(d.filter)}")
    args = f"({', '.join(d.agg.args)})" if d.agg.args else ""
    clauses.append(f"agg: {d.agg.kind}{args}")
    if d.grain:
        clauses.append(f"grain: {', '.join(d.grain)}")
    body = ";\n  ".join(clauses)
    return f"metric {d.name} {{\n  {body}\n}}\n"
