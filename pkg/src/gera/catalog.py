"""Canonical schemas for every entity kind and derived model.

The catalog is the single place that says which fields an entity carries,
their types, which of them are required keys, which field holds the
business date, and which fields form the natural (dedup) key.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

FIELD_TYPES = ("string", "decimal", "integer", "boolean", "date")


@dataclass(frozen=True)
class EntitySchema:
    name: str
    fields: dict[str, str]
    key_fields: tuple[str, ...] = ()
    natural_key: tuple[str, ...] = ()
    date_field: str | None = None
    patterns: dict[str, str] = field(default_factory=dict)
    territory_field: str = "location_id"

    def field_type(self, name: str) -> str | None:
        if name == "event_date":
            return "date"
        return self.fields.get(name)

    def has_field(self, name: str) -> bool:
        return self.field_type(name) is not None

    def valid_format(self, name: str, value: str) -> bool:
        pattern = self.patterns.get(name)
        return pattern is None or re.fullmatch(pattern, value) is not None


ACCOUNT_ID_PATTERN = r"[A-Z]{2}\d{10}"
CIRCUIT_ID_PATTERN = r"\d{10}"

ENTITY_KINDS: dict[str, EntitySchema] = {
    s.name: s
    for s in [
        EntitySchema(
            "service_order",
            {
                "order_id": "string",
                "subscriber_id": "string",
                "service_date": "date",
                "plan": "string",
                "location_id": "string",
            },
            key_fields=("order_id", "subscriber_id"),
            natural_key=("order_id",),
            date_field="service_date",
        ),
        EntitySchema(
            "provisioning_event",
            {
                "order_id": "string",
                "subscriber_id": "string",
                "circuit_id": "string",
                "account_id": "string",
                "activation_date": "date",
                "status": "string",
                "trial": "boolean",
                "location_id": "string",
            },
            key_fields=("order_id", "subscriber_id", "circuit_id", "account_id"),
            natural_key=("order_id",),
            date_field="activation_date",
            patterns={"circuit_id": CIRCUIT_ID_PATTERN, "account_id": ACCOUNT_ID_PATTERN},
        ),
        EntitySchema(
            "invoice_line",
            {
                "invoice_id": "string",
                "account_id": "string",
                "subscriber_id": "string",
                "order_id": "string",
                "invoice_date": "date",
                "amount": "decimal",
                "location_id": "string",
            },
            key_fields=("invoice_id", "account_id"),
            natural_key=("invoice_id",),
            date_field="invoice_date",
            patterns={"account_id": ACCOUNT_ID_PATTERN},
        ),
        EntitySchema(
            "payment_settlement",
            {
                "payment_ref": "string",
                "invoice_id": "string",
                "settled_date": "date",
                "amount": "decimal",
                "location_id": "string",
            },
            key_fields=("payment_ref", "invoice_id"),
            natural_key=("payment_ref",),
            date_field="settled_date",
        ),
        EntitySchema(
            "purchase_order",
            {
                "po_id": "string",
                "material_code": "string",
                "po_date": "date",
                "quantity": "integer",
                "unit_cost": "decimal",
                "location_id": "string",
            },
            key_fields=("po_id", "material_code"),
            natural_key=("po_id", "material_code"),
            date_field="po_date",
        ),
        EntitySchema(
            "receiving",
            {
                "receipt_id": "string",
                "po_id": "string",
                "material_code": "string",
                "received_date": "date",
                "quantity": "integer",
                "location_id": "string",
            },
            key_fields=("receipt_id", "material_code", "location_id"),
            natural_key=("receipt_id",),
            date_field="received_date",
        ),
        EntitySchema(
            "issuance",
            {
                "issue_id": "string",
                "po_id": "string",
                "material_code": "string",
                "job_id": "string",
                "issued_date": "date",
                "quantity": "integer",
                "location_id": "string",
            },
            key_fields=("issue_id", "po_id", "material_code", "location_id"),
            natural_key=("issue_id",),
            date_field="issued_date",
        ),
        EntitySchema(
            "installation",
            {
                "install_id": "string",
                "po_id": "string",
                "material_code": "string",
                "job_id": "string",
                "installed_date": "date",
                "quantity": "integer",
                "cost": "decimal",
                "passings": "integer",
                "location_id": "string",
            },
            key_fields=("install_id", "po_id", "material_code"),
            natural_key=("install_id",),
            date_field="installed_date",
        ),
        EntitySchema(
            "inventory_movement",
            {
                "movement_id": "string",
                "material_code": "string",
                "movement_date": "date",
                "direction": "string",
                "quantity": "integer",
                "location_id": "string",
            },
            key_fields=("movement_id", "material_code", "location_id", "direction"),
            natural_key=("movement_id",),
            date_field="movement_date",
        ),
    ]
}

# Derived models served by the semantic layer next to the raw entity kinds.
MODELS: dict[str, EntitySchema] = {
    s.name: s
    for s in [
        EntitySchema(
            "activations",
            dict(ENTITY_KINDS["provisioning_event"].fields),
            date_field="activation_date",
        ),
        EntitySchema(
            "recon_outcomes",
            {
                "match_spec": "string",
                "lineage_id": "string",
                "outcome": "string",
                "category": "string",
                "location_id": "string",
            },
        ),
        EntitySchema(
            "inventory_aging",
            {
                "snapshot_date": "date",
                "material_id": "string",
                "location_id": "string",
                "bucket": "string",
                "quantity": "integer",
            },
        ),
    ]
}

# Governed read objects that are not metric sources but are policy targets.
READ_OBJECTS = ("exceptions", "inventory_snapshots", "inventory_flags")


def source_schema(name: str) -> EntitySchema | None:
    return ENTITY_KINDS.get(name) or MODELS.get(name)


def all_source_names() -> set[str]:
    return set(ENTITY_KINDS) | set(MODELS) | set(READ_OBJECTS)
