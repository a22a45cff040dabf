"""Cross-system matching, the exception lifecycle, and grain control."""

from .exceptions import (
    HISTOGRAM_BUCKETS,
    ExceptionStore,
    ReconException,
    age_and_escalate,
    aging_histogram,
    derive_escalations,
    fold,
)
from .grain import GrainViolation, aggregate, dedup_and_aggregate, dedup_records, duplicate_events, grain_join
from .matching import MatchResult, Pair, exception_id, run_match
from .report import REPORT_COLUMNS, outcome_counts, reconciliation_report, render_report_text, render_table
from .specs import BUILTIN_MATCH_SPECS, DEFAULT_ESCALATION_DAYS, DEFAULT_WINDOW_DAYS, GrainSpec, MatchSpec, load_match_specs

__all__ = [
    "REPORT_COLUMNS",
    "outcome_counts",
    "BUILTIN_MATCH_SPECS",
    "DEFAULT_ESCALATION_DAYS",
    "DEFAULT_WINDOW_DAYS",
    "ExceptionStore",
    "GrainSpec",
    "GrainViolation",
    "HISTOGRAM_BUCKETS",
    "MatchResult",
    "MatchSpec",
    "Pair",
    "ReconException",
    "age_and_escalate",
    "aggregate",
    "aging_histogram",
    "dedup_and_aggregate",
    "dedup_records",
    "derive_escalations",
    "duplicate_events",
    "exception_id",
    "fold",
    "grain_join",
    "load_match_specs",
    "reconciliation_report",
    "render_report_text",
    "render_table",
    "run_match",
]
