"""Match and grain specifications, plus the built-in broadband match specs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

from .._common import ConfigError, load_json
from ..catalog import ENTITY_KINDS

DEFAULT_WINDOW_DAYS = 30  # one billing cycle
DEFAULT_ESCALATION_DAYS = 14


@dataclass(frozen=True)
class MatchSpec:
    name: str
    left: str
    right: str
    keys: tuple[str, ...]
    window_days: int = DEFAULT_WINDOW_DAYS
    flag_rule_name: str = ""
    right_keys: tuple[str, ...] | None = None
    flag_unmatched: bool = True
    flag_orphans: bool = False
    flag_duplicates: bool = True
    compare: tuple[str, ...] = ()

    def __post_init__(self):
        problems = []
        for side in (self.left, self.right):
            if side not in ENTITY_KINDS:
                problems.append(f"unknown entity_kind {side!r}")
        if not self.keys:
            problems.append("at least one join key is required")
        if self.right_keys is not None and len(self.right_keys) != len(self.keys):
            problems.append("right_keys must pair up with keys")
        if self.window_days < 0:
            problems.append("window_days must be >= 0")
        if not problems:
            lschema, rschema = ENTITY_KINDS[self.left], ENTITY_KINDS[self.right]
            for k in self.keys:
                if not lschema.has_field(k):
                    problems.append(f"{self.left} has no field {k!r}")
            for k in self.rkeys:
                if not rschema.has_field(k):
                    problems.append(f"{self.right} has no field {k!r}")
            for c in self.compare:
                if not (lschema.has_field(c) and rschema.has_field(c)):
                    problems.append(f"compare field {c!r} missing on one side")
        if problems:
            raise ConfigError(f"match spec {self.name!r}: " + "; ".join(problems))

    @property
    def rkeys(self) -> tuple[str, ...]:
        return self.right_keys if self.right_keys is not None else self.keys

    @classmethod
    def from_dict(cls, d: dict) -> "MatchSpec":
        d = dict(d)
        try:
            for k in ("keys", "right_keys", "compare"):
                if d.get(k) is not None:
                    d[k] = tuple(d[k])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"match spec {d.get('name')!r}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


BUILTIN_MATCH_SPECS: tuple[MatchSpec, ...] = (
    MatchSpec(
        "order_provisioning", "service_order", "provisioning_event", ("order_id",),
        flag_rule_name="order_not_provisioned_within_window",
    ),
    MatchSpec(
        "invoice_payment", "invoice_line", "payment_settlement", ("invoice_id",),
        flag_rule_name="unpaid_past_settlement_window", compare=("amount",),
    ),
    MatchSpec(
        "payment_orphans", "invoice_line", "payment_settlement", ("invoice_id",),
        flag_rule_name="orphaned_payment_no_source_invoice",
        flag_unmatched=False, flag_orphans=True, flag_duplicates=False,
    ),
    MatchSpec(
        "issuance_installation", "issuance", "installation", ("po_id", "material_code"),
        flag_rule_name="issued_not_installed_past_threshold",
    ),
    MatchSpec(
        "activation_billing", "provisioning_event", "invoice_line", ("account_id",),
        flag_rule_name="active_circuit_not_billed",
    ),
)


def load_match_specs(path: Path | None) -> list[MatchSpec]:
    """Built-ins, overridden or extended by ``config/matchspecs.json`` when present."""
    specs = {s.name: s for s in BUILTIN_MATCH_SPECS}
    if path is not None and path.exists():
        doc = load_json(path)
        for d in doc.get("match_specs", []):
            spec = MatchSpec.from_dict(d)
            specs[spec.name] = spec
        for name in doc.get("disabled", []):
            specs.pop(name, None)
    return [specs[n] for n in sorted(specs)]


@dataclass(frozen=True)
class GrainSpec:
    entity_kind: str
    grain: tuple[str, ...]
    measures: dict[str, tuple[str, str | None]] = field(hash=False, default_factory=dict)

    def __post_init__(self):
        schema = ENTITY_KINDS.get(self.entity_kind)
        if schema is None:
            raise ConfigError(f"unknown entity_kind {self.entity_kind!r}")
        for g in self.grain:
            if not schema.has_field(g):
                raise ConfigError(f"{self.entity_kind} has no grain field {g!r}")
        for out, (agg, fname) in self.measures.items():
            if agg not in ("sum", "count", "min", "max"):
                raise ConfigError(f"measure {out!r}: unknown aggregation {agg!r}")
            if agg != "count" and not schema.has_field(fname):
                raise ConfigError(f"measure {out!r}: unknown field {fname!r}")
