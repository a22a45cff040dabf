"""Synthetic scenarios with injected faults, and scoring against their manifest."""

from .generator import FAULT_KINDS, FaultSpec, ScenarioConfig, generate, load_scenario, manifest_digest
from .score import ScoreError, check_key_space, expected_at, score, score_store, store_findings

__all__ = [
    "FAULT_KINDS",
    "FaultSpec",
    "ScenarioConfig",
    "ScoreError",
    "check_key_space",
    "expected_at",
    "generate",
    "load_scenario",
    "manifest_digest",
    "score",
    "score_store",
    "store_findings",
]
