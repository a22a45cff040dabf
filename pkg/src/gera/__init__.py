"""Governed cross-system reconciliation engine.

Layers: raw ingest (append-only), staging (normalization and quality),
core reconciliation (matching, exceptions, grain control, inventory aging
and anomaly flags) and governed serving (metric DSL, row-level security,
hash-chained audit log).
"""

__version__ = "0.1.0"
