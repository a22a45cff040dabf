"""Staging tier: identifier/timestamp canonicalization, quality checks, quarantine."""

from .crosswalk import Crosswalk, load_crosswalks
from .drift import DriftReport, ExpectedSchema, detect_schema_drift
from .quality import QualityAssertionSet, QualityReport, apply_assertions
from .records import PASS, QUARANTINED, StagedRecord
from .rules import NormalizationRuleSet, normalize
from .store import StagedStore, StagingConfig, normalize_batch

__all__ = [
    "Crosswalk",
    "DriftReport",
    "ExpectedSchema",
    "NormalizationRuleSet",
    "PASS",
    "QUARANTINED",
    "QualityAssertionSet",
    "QualityReport",
    "StagedRecord",
    "StagedStore",
    "StagingConfig",
    "apply_assertions",
    "detect_schema_drift",
    "load_crosswalks",
    "normalize",
    "normalize_batch",
]
