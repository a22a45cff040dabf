"""Row-level security and the tamper-evident audit log."""

from .access import Governance
from .audit import DEFAULT_RETENTION_DAYS, GENESIS_HASH, TOMBSTONE, AuditLog, VerifyReport, compute_hash
from .policy import EMPTY_POLICY_SET, WILDCARD, Policy, PolicySet, Principal, filter_rows, load_policies, parse_policy_bytes

__all__ = [
    "AuditLog",
    "DEFAULT_RETENTION_DAYS",
    "EMPTY_POLICY_SET",
    "GENESIS_HASH",
    "Governance",
    "Policy",
    "PolicySet",
    "Principal",
    "TOMBSTONE",
    "VerifyReport",
    "WILDCARD",
    "compute_hash",
    "filter_rows",
    "load_policies",
    "parse_policy_bytes",
]
