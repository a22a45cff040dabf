"""Lexer and recursive-descent parser for ``.metric`` files.

Grammar (EBNF)::

    file        = { metric } ;
    metric      = "metric" IDENT "{" clause { ";" clause } [ ";" ] "}" ;
    clause      = "source" ":" IDENT
                | "filter" ":" expr
                | "agg" ":" agg
                | "grain" ":" IDENT { "," IDENT } ;
    agg         = "count" [ "(" ")" ]
                | "count_distinct" "(" IDENT ")"
                | "sum" "(" IDENT ")"
                | "ratio" "(" IDENT "," IDENT ")" ;
    expr        = conj { "or" conj } ;
    conj        = neg { "and" neg } ;
    neg         = "not" neg | test ;
    test        = operand [ cmp_op operand
                          | [ "not" ] "in" "(" literal { "," literal } ")"
                          | "is" [ "not" ] "null" ] ;
    operand     = IDENT | literal | "(" expr ")" ;
    literal     = STRING | NUMBER | DATE | "true" | "false" | "null" ;
    cmp_op      = "=" | "!=" | "<" | "<=" | ">" | ">=" ;

Strings use JSON escapes inside double quotes, dates are bare
``YYYY-MM-DD`` and ``#`` starts a comment that runs to end of line.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from datetime import date
from decimal import Decimal

from .._common import ValidationError, sha256_hex
from .ast import (
    And,
    Aggregation,
    Compare,
    Expr,
    Field,
    InList,
    IsNull,
    Literal,
    Location,
    MetricDefinition,
    Not,
    Or,
)
from .printer import print_metric

KEYWORDS = {
    "metric", "source", "filter", "agg", "grain", "and", "or", "not", "in", "is",
    "true", "false", "null", "count", "count_distinct", "sum", "ratio",
}
CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


class MetricError(ValidationError):
    """A definition failed to lex, parse, type-check or register."""

    category = "metric"

    def __init__(self, message: str, line: int = 0, column: int = 0, expected=(), path: str = "<text>"):
        self.message = message
        self.line = line
        self.column = column
        self.expected = tuple(sorted(set(expected)))
        self.path = path
        where = f"{path}:{line}:{column}: " if line else ""
        tail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{self.category} error: {where}{message}{tail}")


class MetricLexError(MetricError):
    category = "lex"


class MetricSyntaxError(MetricError):
    category = "syntax"


class MetricTypeError(MetricError):
    category = "type"


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT KEYWORD STRING NUMBER DATE OP PUNCT EOF
    text: str
    line: int
    column: int
    value: object = None

    def describe(self) -> str:
        return "end of input" if self.kind == "EOF" else repr(self.text)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<date>\d{4}-\d{2}-\d{2}(?![\w.]))
  | (?P<number>-?\d+(?:\.\d+)?(?![\w.]))
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|=|<|>)
  | (?P<punct>[{}():;,])
    """,
    re.VERBOSE,
)


def tokenize(text: str, path: str = "<text>") -> list[Token]:
    tokens: list[Token] = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            ch = text[pos]
            if ch == '"':
                raise MetricLexError("unterminated string literal", line, col, path=path)
            raise MetricLexError(f"unexpected character {ch!r}", line, col, path=path)
        kind = m.lastgroup
        raw = m.group()
        if kind == "nl":
            line, col = line + 1, 1
        elif kind in ("ws", "comment"):
            col += len(raw)
        else:
            value: object = None
            if kind == "date":
                try:
                    value = date.fromisoformat(raw)
                except ValueError:
                    raise MetricLexError(f"invalid date literal {raw}", line, col, path=path) from None
                tok_kind = "DATE"
            elif kind == "number":
                value, tok_kind = Decimal(raw), "NUMBER"
            elif kind == "string":
                try:
                    value = json.loads(raw)
                except json.JSONDecodeError:
                    raise MetricLexError(f"invalid escape in string {raw}", line, col, path=path) from None
                tok_kind = "STRING"
            elif kind == "ident":
                tok_kind = "KEYWORD" if raw in KEYWORDS else "IDENT"
            elif kind == "op":
                tok_kind = "OP"
            else:
                tok_kind = "PUNCT"
            tokens.append(Token(tok_kind, raw, line, col, value))
            col += len(raw)
        pos = m.end()
    tokens.append(Token("EOF", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str, path: str):
        self.text = text
        self.path = path
        self.tokens = tokenize(text, path)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, expected, message: str | None = None):
        t = self.tok
        raise MetricSyntaxError(message or f"unexpected {t.describe()}", t.line, t.column, expected, self.path)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("KEYWORD", "PUNCT", "OP") and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail([text])
        t = self.tok
        self.i += 1
        return t

    def ident(self, what: str = "identifier") -> str:
        if self.tok.kind != "IDENT":
            self.fail([what])
        t = self.tok
        self.i += 1
        return t.text

    # -- file / metric ---------------------------------------------------
    def file(self) -> list[MetricDefinition]:
        out = []
        while self.tok.kind != "EOF":
            out.append(self.metric())
        return out

    def metric(self) -> MetricDefinition:
        start = self.expect("metric")
        name = self.ident("metric name")
        self.expect("{")
        clauses: dict[str, object] = {}
        while True:
            if self.at("}"):
                break
            t = self.tok
            if not (t.kind == "KEYWORD" and t.text in ("source", "filter", "agg", "grain")):
                self.fail(["source", "filter", "agg", "grain", "}"])
            if t.text in clauses:
                raise MetricSyntaxError(f"duplicate clause {t.text!r}", t.line, t.column, path=self.path)
            self.i += 1
            self.expect(":")
            if t.text == "source":
                clauses["source"] = self.ident("source name")
            elif t.text == "filter":
                clauses["filter"] = self.expr()
            elif t.text == "agg":
                clauses["agg"] = self.agg()
            else:
                fields = [self.ident("field name")]
                while self.at(","):
                    self.i += 1
                    fields.append(self.ident("field name"))
                clauses["grain"] = tuple(fields)
            if self.at(";"):
                self.i += 1
            elif not self.at("}"):
                self.fail([";", "}"])
        end = self.expect("}")
        if "agg" not in clauses:
            raise MetricSyntaxError("metric has no agg clause", end.line, end.column, ["agg"], self.path)
        return MetricDefinition(
            name=name,
            source=clauses.get("source"),
            agg=clauses["agg"],
            filter=clauses.get("filter"),
            grain=clauses.get("grain", ()),
            location=Location(self.path, start.line, start.column),
        )

    def agg(self) -> Aggregation:
        t = self.tok
        if t.kind != "KEYWORD" or t.text not in ("count", "count_distinct", "sum", "ratio"):
            self.fail(["count", "count_distinct", "sum", "ratio"])
        self.i += 1
        if t.text == "count":
            if self.at("("):
                self.i += 1
                self.expect(")")
            return Aggregation("count")
        self.expect("(")
        args = [self.ident("field name" if t.text != "ratio" else "metric name")]
        if t.text == "ratio":
            self.expect(",")
            args.append(self.ident("metric name"))
        self.expect(")")
        return Aggregation(t.text, tuple(args))

    # -- expressions -----------------------------------------------------
    def expr(self) -> Expr:
        left = self.conj()
        while self.at("or"):
            self.i += 1
            left = Or(left, self.conj())
        return left

    def conj(self) -> Expr:
        left = self.neg()
        while self.at("and"):
            self.i += 1
            left = And(left, self.neg())
        return left

    def neg(self) -> Expr:
        if self.at("not"):
            self.i += 1
            return Not(self.neg())
        return self.test()

    def test(self) -> Expr:
        left = self.operand()
        t = self.tok
        if t.kind == "OP":
            self.i += 1
            return Compare(t.text, left, self.operand())
        if self.at("not") and self.tokens[self.i + 1].text == "in":
            self.i += 2
            return InList(left, self.literal_list(), negated=True)
        if self.at("in"):
            self.i += 1
            return InList(left, self.literal_list())
        if self.at("is"):
            self.i += 1
            negated = False
            if self.at("not"):
                self.i += 1
                negated = True
            self.expect("null")
            return IsNull(left, negated)
        return left

    def literal_list(self) -> tuple[Literal, ...]:
        self.expect("(")
        values = [self.literal()]
        while self.at(","):
            self.i += 1
            values.append(self.literal())
        self.expect(")")
        return tuple(values)

    def literal(self) -> Literal:
        t = self.tok
        if t.kind == "STRING":
            self.i += 1
            return Literal(t.value, "string")
        if t.kind == "NUMBER":
            self.i += 1
            return Literal(t.value, "number")
        if t.kind == "DATE":
            self.i += 1
            return Literal(t.value, "date")
        if t.kind == "KEYWORD" and t.text in ("true", "false"):
            self.i += 1
            return Literal(t.text == "true", "boolean")
        if t.kind == "KEYWORD" and t.text == "null":
            self.i += 1
            return Literal(None, "null")
        self.fail(["string", "number", "date", "true", "false", "null"])
        raise AssertionError  # unreachable

    def operand(self) -> Expr:
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if self.tok.kind == "IDENT":
            name = self.tok.text
            self.i += 1
            return Field(name)
        if self.tok.kind in ("STRING", "NUMBER", "DATE") or self.tok.text in ("true", "false", "null"):
            return self.literal()
        self.fail(["field", "literal", "(", "not"])
        raise AssertionError  # unreachable


def _with_version(d: MetricDefinition) -> MetricDefinition:
    return replace(d, version=sha256_hex(print_metric(d)))


def parse_metrics(text: str, path: str = "<text>") -> list[MetricDefinition]:
    """Every definition in a file, each stamped with its content digest."""
    return [_with_version(d) for d in _Parser(text, path).file()]


def parse_metric(text: str, path: str = "<text>") -> MetricDefinition:
    defs = parse_metrics(text, path)
    if len(defs) != 1:
        raise MetricSyntaxError(f"expected exactly one metric, found {len(defs)}", 1, 1, ["metric"], path)
    return defs[0]
