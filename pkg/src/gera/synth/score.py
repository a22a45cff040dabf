"""Recall and precision of engine findings against a ground-truth manifest.

A finding is a ``(channel, key)`` pair read from the store:

* ``exception:<spec>:<category>:<status>`` keyed by the subject's natural key
* ``quarantine:<reason>`` keyed by the quarantined record's natural key
* ``flag`` keyed by ``material|location``

Each fault kind owns a set of channel prefixes. Findings under a kind's
prefixes that another kind's entries already explain are not charged
against it.
"""

from __future__ import annotations

from datetime import date
from pathlib import Path

from .._common import ValidationError, load_json
from ..catalog import ENTITY_KINDS
from .generator import FAULT_KINDS

Finding = tuple[str, str]


class ScoreError(ValidationError):
    def __init__(self, missing: list[str]):
        self.missing = missing
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        super().__init__(f"{len(missing)} manifest keys are not present in the store: {shown}")


def kind_prefixes(kind: str, target: str) -> tuple[str, ...]:
    if kind in ("silent_mapping_failure", "late_arrival"):
        return ("exception:activation_billing:unmatched:",)
    if kind == "duplicate_fanout":
        return (f"exception:dedup:{target}:duplicate:",)
    if kind == "schema_drift":
        return ("quarantine:schema_drift:", "exception:activation_billing:unmatched:", "exception:payment_orphans:orphaned:")
    return ("flag",)


def key_string(entity_kind: str, values: dict) -> str:
    return "|".join(str(values.get(k)) for k in ENTITY_KINDS[entity_kind].natural_key)


def expected_at(entry: dict, as_of: date) -> set[Finding]:
    out = set()
    for x in entry["expected"]:
        if date.fromisoformat(x["from"]) <= as_of and (x["until"] is None or as_of < date.fromisoformat(x["until"])):
            out.add((x["channel"], x["key"]))
    return out


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else round(num / den, 10)


def score(findings: set[Finding], manifest: dict, as_of: date) -> dict:
    """Per-kind recall and precision plus the findings no fault explains."""
    by_kind: dict[str, dict] = {}
    expected: dict[str, set[Finding]] = {}
    prefixes: dict[str, set[str]] = {}
    for e in manifest["faults"]:
        expected.setdefault(e["kind"], set()).update(expected_at(e, as_of))
        prefixes.setdefault(e["kind"], set()).update(kind_prefixes(e["kind"], e["target"]))
    explained = set().union(*expected.values()) if expected else set()
    for kind in sorted(expected, key=FAULT_KINDS.index):
        exp = expected[kind]
        others = explained - exp
        detected = {f for f in findings if f[0].startswith(tuple(prefixes[kind])) and f not in others}
        hit = detected & exp
        by_kind[kind] = {
            "expected": len(exp),
            "detected": len(detected),
            "true_positive": len(hit),
            "recall": _ratio(len(hit), len(exp)),
            "precision": _ratio(len(hit), len(detected)),
            "missed": sorted(map(list, exp - detected)),
            "spurious": sorted(map(list, detected - exp)),
        }
    return {
        "as_of": as_of.isoformat(),
        "findings": len(findings),
        "by_kind": by_kind,
        "unexplained": sorted(map(list, findings - explained)),
    }


def store_findings(store, as_of: date) -> set[Finding]:
    out: set[Finding] = set()
    for ex in store.exceptions().state(as_of).values():
        key = key_string(ex.entity_kind, ex.natural_key or {})
        out.add((f"exception:{ex.match_spec}:{ex.category}:{ex.status}", key))
    for rec in store.staged.load_quarantine(through=as_of):
        out.add((f"quarantine:{rec.reason}", key_string(rec.entity_kind, rec.fields)))
    for f in store.flags.flags(as_of):
        out.add(("flag", f"{f.material_id}|{f.location_id}"))
    return out


def store_keys(store, as_of: date) -> dict[str, set[str]]:
    keys: dict[str, set[str]] = {}
    for rec in store.staged.load_pass(through=as_of) + store.staged.load_quarantine(through=as_of):
        keys.setdefault(rec.entity_kind, set()).add(key_string(rec.entity_kind, rec.fields))
    return keys


def check_key_space(manifest: dict, keys: dict[str, set[str]]) -> None:
    missing = sorted(
        f"{e['key_entity']}:{e['key']}" for e in manifest["faults"] if e["key"] not in keys.get(e["key_entity"], ())
    )
    if missing:
        raise ScoreError(missing)


def score_store(store, manifest_path: Path, as_of: date) -> dict:
    store.require_run(as_of)
    manifest = load_json(Path(manifest_path))
    check_key_space(manifest, store_keys(store, as_of))
    return score(store_findings(store, as_of), manifest, as_of)
