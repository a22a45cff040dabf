from __future__ import annotations

from datetime import date
from typing import Iterable, Mapping, Union

from .exceptions import OPEN, ReconException, aging_histogram
from .matching import MATCHED_LATE, RESOLVED_MANUAL, MatchResult

REPORT_COLUMNS = (
    "match_spec",
    "matched",
    "pending",
    "open",
    "escalated",
    "matched_late",
    "resolved_manual",
    "unflagged",
    "resolution_rate",
    "reconciliation_rate",
)


Counts = Union[MatchResult, Mapping[str, int]]


def outcome_counts(rows: Iterable[dict]) -> dict[str, dict[str, int]]:
    """Per-spec matched/pending/unflagged counts from ``recon_outcomes`` rows."""
    out: dict[str, dict[str, int]] = {}
    for r in rows:
        c = out.setdefault(r["match_spec"], {"matched": 0, "pending": 0, "unflagged": 0})
        if r["outcome"] in c:
            c[r["outcome"]] += 1
    return out


def _count(result: Counts | None, name: str) -> int:
    if result is None:
        return 0
    if isinstance(result, MatchResult):
        return len({"matched": result.matches, "pending": result.pending, "unflagged": result.unflagged}[name])
    return int(result.get(name, 0))


def _rate(num: int, den: int) -> float | None:
    # an empty denominator has no meaningful rate; consumers must skip nulls
    return None if den == 0 else round(num / den, 6)


def spec_row(name: str, result: Counts | None, exceptions: list[ReconException]) -> dict:
    mine = [e for e in exceptions if e.match_spec == name]
    matched = _count(result, "matched")
    open_ = sum(e.status == OPEN for e in mine)
    late = sum(e.status == MATCHED_LATE for e in mine)
    manual = sum(e.status == RESOLVED_MANUAL for e in mine)
    return {
        "match_spec": name,
        "matched": matched,
        "pending": _count(result, "pending"),
        "open": open_,
        "escalated": sum(e.escalated for e in mine),
        "matched_late": late,
        "resolved_manual": manual,
        "unflagged": _count(result, "unflagged"),
        "resolution_rate": _rate(late + manual, len(mine)),
        "reconciliation_rate": _rate(matched, matched + open_ + late),
    }


def reconciliation_report(
    results: Mapping[str, Counts], exceptions: Iterable[ReconException], as_of: date
) -> dict:
    exceptions = list(exceptions)
    names = sorted(set(results) | {e.match_spec for e in exceptions if not e.match_spec.startswith("dedup:")})
    dedup = sorted({e.match_spec for e in exceptions if e.match_spec.startswith("dedup:")})
    return {
        "as_of": as_of.isoformat(),
        "specs": [spec_row(n, results.get(n), exceptions) for n in names],
        "dedup": {n: sum(e.status == OPEN for e in exceptions if e.match_spec == n) for n in dedup},
        "aging_histogram": aging_histogram(exceptions),
    }


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_table(rows: list[dict], columns: tuple[str, ...] | list[str]) -> str:
    cells = [list(columns)] + [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_report_text(report: dict) -> str:
    out = [f"reconciliation as of {report['as_of']}", "", render_table(report["specs"], REPORT_COLUMNS)]
    if report["dedup"]:
        out += ["", "open duplicates: " + ", ".join(f"{k}={v}" for k, v in report["dedup"].items())]
    hist = report["aging_histogram"]
    out += ["", "open exception ages: " + "  ".join(f"{k}:{v}" for k, v in hist.items())]
    return "\n".join(out) + "\n"
