"""Allow-only row-level security policies.

A policy grants one role visibility of one object (entity kind, model,
metric, read object or ``*``) restricted to rows whose territory field
holds one of the allowed values (or any value for ``*``). Anything no
policy grants is invisible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .._common import ConfigError, digest_obj
from ..catalog import all_source_names

WILDCARD = "*"


@dataclass(frozen=True)
class Principal:
    role: str
    territories: tuple[str, ...] | None = None  # asserted attributes; None means "not narrowed"

    def to_dict(self) -> dict:
        return {"role": self.role, "territories": list(self.territories) if self.territories is not None else None}


@dataclass(frozen=True)
class Policy:
    role: str
    entity: str
    allowed: frozenset[str] | str  # WILDCARD or a set of territory values
    territory_field: str = "location_id"

    @property
    def wildcard_territory(self) -> bool:
        return self.allowed == WILDCARD

    def applies(self, role: str, objects: Iterable[str]) -> bool:
        return self.role == role and (self.entity == WILDCARD or self.entity in set(objects))

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "entity": self.entity,
            "territory_field": self.territory_field,
            "allowed": WILDCARD if self.wildcard_territory else sorted(self.allowed),
        }


@dataclass(frozen=True)
class PolicySet:
    policies: tuple[Policy, ...]
    version: str
    source: dict = field(default_factory=dict, hash=False, compare=False)

    @classmethod
    def from_dict(cls, doc: dict, known_objects: Iterable[str] = ()) -> "PolicySet":
        if not isinstance(doc, dict) or not isinstance(doc.get("policies"), list):
            raise ConfigError("policy file must be an object with a 'policies' list")
        known = all_source_names() | set(known_objects)
        out = []
        for i, p in enumerate(doc["policies"]):
            where = f"policy #{i + 1}"
            if not isinstance(p, dict):
                raise ConfigError(f"{where}: must be an object")
            extra = set(p) - {"role", "entity", "territory_field", "allowed"}
            if extra:
                raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
            role, entity = p.get("role"), p.get("entity", WILDCARD)
            if not isinstance(role, str) or not role:
                raise ConfigError(f"{where}: role is required")
            if entity != WILDCARD and entity not in known:
                raise ConfigError(f"{where}: unknown entity {entity!r}")
            allowed = p.get("allowed")
            if allowed == WILDCARD:
                values: frozenset[str] | str = WILDCARD
            elif isinstance(allowed, list) and allowed and all(isinstance(v, str) for v in allowed):
                values = frozenset(allowed)
            else:
                raise ConfigError(f"{where}: allowed must be '*' or a non-empty list of strings")
            out.append(Policy(role, entity, values, p.get("territory_field", "location_id")))
        return cls(tuple(out), digest_obj(doc), doc)

    def for_principal(self, principal: Principal, objects: Iterable[str]) -> list[Policy]:
        objects = list(objects)
        return [p for p in self.policies if p.applies(principal.role, objects)]

    def roles(self) -> list[str]:
        return sorted({p.role for p in self.policies})


EMPTY_POLICY_SET = PolicySet((), digest_obj({"policies": []}), {"policies": []})


def parse_policy_bytes(data: bytes, known_objects: Iterable[str] = ()) -> PolicySet:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"policy file is not valid JSON: {exc}") from exc
    return PolicySet.from_dict(doc, known_objects)


def load_policies(path: Path | str, known_objects: Iterable[str] = ()) -> PolicySet:
    return parse_policy_bytes(Path(path).read_bytes(), known_objects)


def row_visible(row: dict, policy: Policy, principal: Principal) -> bool:
    asserted = set(principal.territories) if principal.territories is not None else None
    value = row.get(policy.territory_field)
    if policy.wildcard_territory:
        if asserted is None:
            return True
        return value is not None and str(value) in asserted
    if value is None:
        return False
    value = str(value)
    return value in policy.allowed and (asserted is None or value in asserted)


def filter_rows(
    rows: Iterable[dict], principal: Principal, policy_set: PolicySet, objects: Iterable[str]
) -> list[dict]:
    """Rows of ``objects`` the principal may see; deny by default."""
    applicable = policy_set.for_principal(principal, objects)
    if not applicable:
        return []
    return [r for r in rows if any(row_visible(r, p, principal) for p in applicable)]

