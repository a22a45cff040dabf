"""The single gate every operational read goes through.

``Governance.read`` filters rows by policy and appends exactly one audit
event recording the visible row count and the policy version used.
"""

from __future__ import annotations

from datetime import date
from pathlib import Path
from typing import Iterable

from .._common import atomic_write
from .audit import AuditLog
from .policy import EMPTY_POLICY_SET, PolicySet, Principal, filter_rows, parse_policy_bytes


class Governance:
    def __init__(self, root: Path | str, known_objects: Iterable[str] = ()):
        self.root = Path(root)
        self.dir = self.root / "governance"
        self.active_path = self.dir / "policies.json"
        self.audit = AuditLog(self.root)
        self.known_objects = tuple(known_objects)

    def active(self) -> PolicySet:
        if not self.active_path.exists():
            return EMPTY_POLICY_SET
        return parse_policy_bytes(self.active_path.read_bytes(), self.known_objects)

    def load(self, data: bytes, as_of: date, principal: Principal) -> tuple[PolicySet, bool]:
        """Validate and activate a policy file.

        Invalid input raises before anything changes. An unchanged digest
        activates nothing and writes no audit event.
        """
        new = parse_policy_bytes(data, self.known_objects)
        existed = self.active_path.exists()
        old = self.active()
        if existed and old.version == new.version:
            return old, False
        self.dir.mkdir(parents=True, exist_ok=True)
        atomic_write(self.active_path, data)
        self.audit.append(
            as_of=as_of,
            principal=principal,
            action="admin_policy_change",
            object_name="policies",
            row_count=len(new.policies),
            policy_version=new.version,
            detail={"old_version": old.version if existed else None, "new_version": new.version},
        )
        return new, True

    def read(
        self,
        rows: Iterable[dict],
        principal: Principal,
        objects: Iterable[str],
        *,
        as_of: date,
        action: str,
        object_name: str,
        detail: dict | None = None,
    ) -> tuple[list[dict], dict]:
        """Visible rows plus the audit event that recorded the read."""
        policies = self.active()
        visible = filter_rows(rows, principal, policies, objects)
        event = self.audit.append(
            as_of=as_of,
            principal=principal,
            action=action,
            object_name=object_name,
            row_count=len(visible),
            policy_version=policies.version,
            detail=detail,
        )
        return visible, event
