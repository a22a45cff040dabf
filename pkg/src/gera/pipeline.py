"""Store layout, configuration loading and the per-date ``run``.

A run for date D is a full recompute from the staged tier through D:
stage any raw batches not yet staged under the current configuration,
deduplicate, match every spec, append missing exception events, then
rebuild inventory snapshots and flags for the look-back window and the
FIFO aging at D. Every derived date depends only on data, so running
day by day or once at the end writes the same exception store.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

from filelock import FileLock

from ._common import (
    ConfigError,
    MissingDataError,
    ValidationError,
    atomic_write,
    canonical_json,
    digest_obj,
    load_json,
    read_ndjson,
    write_ndjson,
)
from .catalog import ENTITY_KINDS, MODELS, READ_OBJECTS
from .governance import Governance, Principal, filter_rows
from .ingest import RawStore
from .inventory import (
    AGING_BUCKETS,
    DetectionResult,
    DetectorParams,
    FlagStore,
    aging_report,
    aging_rows,
    detect_series,
    fifo_age,
    investigation_queue,
    movements_from_records,
    snapshot_series,
)
from .inventory.detectors import METHODS
from .reconcile import (
    DEFAULT_ESCALATION_DAYS,
    ExceptionStore,
    MatchSpec,
    ReconException,
    dedup_records,
    duplicate_events,
    load_match_specs,
    outcome_counts,
    reconciliation_report,
    run_match,
)
from .reconcile.matching import event_sort_key
from .semantic import Evaluator, Registry, load_registry
from .staging import StagedRecord, StagingConfig, apply_assertions, normalize_batch
from .staging.store import StagedStore

log = logging.getLogger(__name__)

DEFAULT_LOOKBACK_DAYS = 35  # detector window of 30 plus slack
SYSTEM = Principal("system")
CONFIG_FILES = ("rules.json", "schemas.json", "assertions.json", "anomaly.json", "policies.json", "matchspecs.json")
INVENTORY_KINDS = ("receiving", "issuance", "inventory_movement")


def _defaults() -> Path:
    return Path(str(resources.files("gera") / "defaults"))


def known_objects(registry: Registry | None = None) -> set[str]:
    names = set(ENTITY_KINDS) | set(MODELS) | set(READ_OBJECTS)
    if registry is not None:
        names |= set(registry.names())
    return names


@dataclass
class EngineConfig:
    staging: StagingConfig
    specs: list[MatchSpec]
    escalation_days: int
    detector: DetectorParams
    registry: Registry
    versions: dict[str, str] = field(default_factory=dict)


class Store:
    """One engine store directory."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.config_dir = self.root / "config"

    # -- setup -----------------------------------------------------------
    @property
    def initialized(self) -> bool:
        return (self.config_dir / "rules.json").exists()

    def init(self) -> list[str]:
        """Copy the shipped defaults into ``config/`` without overwriting anything."""
        src = _defaults()
        created = []
        self.config_dir.mkdir(parents=True, exist_ok=True)
        for name in CONFIG_FILES:
            dst = self.config_dir / name
            if not dst.exists():
                shutil.copyfile(src / name, dst)
                created.append(f"config/{name}")
        for sub, pattern in (("crosswalks", "*.json"), ("metrics", "*.metric")):
            (self.config_dir / sub).mkdir(exist_ok=True)
            for f in sorted((src / sub).glob(pattern)):
                dst = self.config_dir / sub / f.name
                if not dst.exists():
                    shutil.copyfile(f, dst)
                    created.append(f"config/{sub}/{f.name}")
        for d in ("raw", "staged", "recon", "inventory", "audit", "runs"):
            (self.root / d).mkdir(exist_ok=True)
        return created

    def require_init(self) -> None:
        if not self.initialized:
            raise ValidationError(f"{self.root} is not an initialized store; run `gera init` first")

    def load_config(self) -> EngineConfig:
        self.require_init()
        staging = StagingConfig.load(self.config_dir)
        ms_path = self.config_dir / "matchspecs.json"
        ms_doc = load_json(ms_path) if ms_path.exists() else {}
        escalation = int(ms_doc.get("escalation_days", DEFAULT_ESCALATION_DAYS))
        if escalation < 0:
            raise ConfigError("escalation_days must be >= 0")
        specs = load_match_specs(ms_path)
        an_path = self.config_dir / "anomaly.json"
        an_doc = load_json(an_path) if an_path.exists() else {}
        detector = DetectorParams.from_dict(an_doc)
        registry = load_registry([self.config_dir / "metrics"])
        versions = {
            **staging.versions(),
            "matchspecs": digest_obj({"specs": [s.to_dict() for s in specs], "escalation_days": escalation}),
            "anomaly": digest_obj(an_doc),
            "metrics": digest_obj({n: registry.get(n).version for n in registry.names()}),
        }
        return EngineConfig(staging, specs, escalation, detector, registry, versions)

    # -- components ------------------------------------------------------
    @property
    def raw(self) -> RawStore:
        return RawStore(self.root)

    @property
    def staged(self) -> StagedStore:
        return StagedStore(self.root)

    def exceptions(self, escalation_days: int | None = None) -> ExceptionStore:
        if escalation_days is None:
            ms = self.config_dir / "matchspecs.json"
            escalation_days = int(load_json(ms).get("escalation_days", DEFAULT_ESCALATION_DAYS)) if ms.exists() else DEFAULT_ESCALATION_DAYS
        return ExceptionStore(self.root, escalation_days)

    @property
    def flags(self) -> FlagStore:
        return FlagStore(self.root)

    def governance(self, registry: Registry | None = None) -> Governance:
        return Governance(self.root, known_objects(registry))

    # -- paths -----------------------------------------------------------
    def run_path(self, as_of: date) -> Path:
        return self.root / "runs" / f"{as_of.isoformat()}.json"

    def outcomes_path(self, as_of: date) -> Path:
        return self.root / "recon" / "outcomes" / f"{as_of.isoformat()}.ndjson"

    def snapshot_path(self, day: date) -> Path:
        return self.root / "inventory" / "snapshots" / f"{day.isoformat()}.ndjson"

    def aging_rows_path(self, as_of: date) -> Path:
        return self.root / "inventory" / "aging" / f"{as_of.isoformat()}.ndjson"

    def aging_report_path(self, as_of: date) -> Path:
        return self.root / "inventory" / "aging" / f"{as_of.isoformat()}.json"

    def require_run(self, as_of: date) -> dict:
        path = self.run_path(as_of)
        if not path.exists():
            raise MissingDataError(f"no run for as_of {as_of}; run `gera run --as-of {as_of}` first")
        return load_json(path)


# -- staging ------------------------------------------------------------------
def stage_through(store: Store, config: StagingConfig, as_of: date) -> dict:
    """Stage raw batches up to ``as_of``; restage from the first stale day onward."""
    batches = [b for b in store.raw.batches() if b.as_of <= as_of]
    staged = store.staged
    versions = config.versions()
    current = digest_obj(versions)
    entries = staged.manifest()["batches"]
    stale_days = [b.as_of for b in batches if entries.get(b.batch_hash, {}).get("config_digest") != current]
    if not stale_days:
        return {"batches_staged": 0}
    first = min(stale_days)
    todo = [b for b in batches if b.as_of >= first]
    referential = _has_referential(config)
    reference = staged.load_pass(through=first - timedelta(days=1)) if referential else []
    by_day: dict[date, list] = {}
    for b in todo:
        by_day.setdefault(b.as_of, []).append(b)
    raw = store.raw
    count = 0
    for day in sorted(by_day):
        normalized = []
        for info in sorted(by_day[day], key=lambda b: b.seq):
            records, drift = normalize_batch(raw.read_batch(info.batch_hash), info, config)
            normalized.append((info, records, drift))
        flat = [r for _, recs, _ in normalized for r in recs]
        _, verdicts = apply_assertions(flat, config.assertions, reference)
        results = []
        i = 0
        for info, recs, drift in normalized:
            results.append((info, verdicts[i:i + len(recs)], drift, versions))
            i += len(recs)
        staged.write_batches(results)
        if referential:
            reference.extend(r for r in verdicts if r.passed)
        count += len(results)
    return {"batches_staged": count}


def _has_referential(config: StagingConfig) -> bool:
    return any(a.type == "referential" for a in config.assertions.assertions)


# -- reconciliation -------------------------------------------------------------
@dataclass
class ReconOutput:
    events: list[dict]
    outcomes: list[dict]
    counts: dict[str, dict[str, int]]
    kept: list[StagedRecord]


def reconcile(records: list[StagedRecord], specs: list[MatchSpec], as_of: date) -> ReconOutput:
    kept, dups = dedup_records(records)
    by_kind: dict[str, list[StagedRecord]] = {}
    for r in kept:
        by_kind.setdefault(r.entity_kind, []).append(r)
    events = duplicate_events(dups)
    outcomes = []
    counts = {}
    for spec in specs:
        result = run_match(spec, by_kind.get(spec.left, []), by_kind.get(spec.right, []), as_of)
        events.extend(result.events)
        counts[spec.name] = result.counts()
        lefts = {r.lineage_id: r for r in by_kind.get(spec.left, [])}
        for lineage, outcome in sorted(result.outcomes.items()):
            if outcome == "exception":
                continue
            rec = lefts[lineage]
            outcomes.append(
                {
                    "match_spec": spec.name,
                    "lineage_id": lineage,
                    "outcome": outcome,
                    "category": None,
                    "location_id": rec.get("location_id"),
                }
            )
    events.sort(key=event_sort_key)
    return ReconOutput(events, outcomes, counts, kept)


def exception_rows(exceptions: list[ReconException]) -> list[dict]:
    """Exceptions in ``recon_outcomes`` shape; the territory doubles as location_id."""
    return [
        {
            "match_spec": e.match_spec,
            "lineage_id": e.lineage_id,
            "outcome": e.status,
            "category": e.category,
            "location_id": e.territory,
        }
        for e in exceptions
    ]


def governed_exception_row(e: ReconException) -> dict:
    return {**e.to_dict(), "location_id": e.territory}


# -- inventory ------------------------------------------------------------------
def inventory_step(store: Store, kept: list[StagedRecord], params: DetectorParams, as_of: date, lookback: int) -> dict:
    movements = movements_from_records(r for r in kept if r.entity_kind in INVENTORY_KINDS)
    movements = [m for m in movements if m.effective_date <= as_of]
    window_start = as_of - timedelta(days=lookback)
    summary = {"snapshot_dates": 0, "flags": 0, "aging_keys": 0, "negative_keys": 0}
    if movements:
        first = min(m.effective_date for m in movements)
        series_by_day = snapshot_series(movements, first, as_of)
        per_key: dict[tuple[str, str], list[tuple[date, float]]] = {}
        for day in sorted(series_by_day):
            for snap in series_by_day[day]:
                if snap.quality == "pass":
                    per_key.setdefault((snap.material_id, snap.location_id), []).append(
                        (day, float(snap.quantity_on_hand))
                    )
            if day >= window_start:
                write_ndjson(store.snapshot_path(day), (s.to_dict() for s in series_by_day[day]))
                summary["snapshot_dates"] += 1
        only = {d for d in series_by_day if d >= window_start}
        result = DetectionResult()
        for key in sorted(per_key):
            detect_series(key, per_key[key], params, result, only_dates=only)
        flags = sorted(
            result.flags,
            key=lambda f: (f.snapshot_date, f.material_id, f.location_id, METHODS.index(f.method)),
        )
        store.flags.append_missing(flags)
        summary["flags"] = len(flags)
        summary["insufficient_history"] = len(result.insufficient)
    allocations, negative = fifo_age(as_of, movements)
    rows = aging_rows(as_of, allocations)
    write_ndjson(store.aging_rows_path(as_of), rows)
    report = aging_report(as_of, allocations, negative)
    atomic_write(store.aging_report_path(as_of), json.dumps(report, indent=1, sort_keys=True) + "\n")
    summary["aging_keys"] = len(report["rows"])
    summary["negative_keys"] = len(negative)
    return summary


# -- the run ------------------------------------------------------------------
def run(store: Store, as_of: date, lookback: int = DEFAULT_LOOKBACK_DAYS) -> dict:
    """Process everything known through ``as_of``. Idempotent per date."""
    if lookback < 0:
        raise ValidationError("lookback must be >= 0")
    config = store.load_config()
    store.root.joinpath("runs").mkdir(parents=True, exist_ok=True)
    with FileLock(str(store.root / "run.lock")):
        gov = store.governance(config.registry)
        if not gov.active_path.exists() and (store.config_dir / "policies.json").exists():
            gov.load((store.config_dir / "policies.json").read_bytes(), as_of, SYSTEM)

        stage_through(store, config.staging, as_of)
        records = store.staged.load_pass(through=as_of)
        recon = reconcile(records, config.specs, as_of)
        exstore = store.exceptions(config.escalation_days)
        exstore.sync(recon.events, as_of)
        write_ndjson(store.outcomes_path(as_of), recon.outcomes)

        inventory = inventory_step(store, recon.kept, config.detector, as_of, lookback)

        manifest = store.staged.manifest()["batches"]
        through = [e for e in manifest.values() if date.fromisoformat(e["as_of"]) <= as_of]
        state = exstore.state(as_of)
        summary = {
            "as_of": as_of.isoformat(),
            "lookback_days": lookback,
            "config_versions": config.versions,
            "staged": {
                "batches": len(through),
                "raw": sum(e["raw"] for e in through),
                "pass": sum(e["pass"] for e in through),
                "quarantined": sum(e["quarantined"] for e in through),
            },
            "match": recon.counts,
            "exceptions": {
                "open": sum(e.is_open for e in state.values()),
                "escalated": sum(e.escalated for e in state.values()),
                "total": len(state),
            },
            "inventory": inventory,
        }
        atomic_write(store.run_path(as_of), json.dumps(summary, indent=1, sort_keys=True) + "\n")
    log.info("run %s complete", as_of)
    return summary


# -- governed reads -------------------------------------------------------------
def recon_report_rows(store: Store, as_of: date) -> tuple[list[dict], list[ReconException]]:
    store.require_run(as_of)
    outcomes = read_ndjson(store.outcomes_path(as_of))
    exceptions = store.exceptions().list_exceptions(as_of)
    return outcomes, exceptions


def governed_recon_report(store: Store, as_of: date, principal: Principal) -> dict:
    config = store.load_config()
    outcomes, exceptions = recon_report_rows(store, as_of)
    gov = store.governance(config.registry)
    policies = gov.active()
    objects = {"recon_outcomes", "exceptions"}
    visible_outcomes = filter_rows(outcomes, principal, policies, objects)
    by_id = {e.exception_id: e for e in exceptions}
    visible_ex_rows = filter_rows([governed_exception_row(e) for e in exceptions], principal, policies, objects)
    visible_ex = [by_id[r["exception_id"]] for r in visible_ex_rows]
    counts = outcome_counts(visible_outcomes)
    for spec in config.specs:
        counts.setdefault(spec.name, {"matched": 0, "pending": 0, "unflagged": 0})
    report = reconciliation_report(counts, visible_ex, as_of)
    gov.audit.append(
        as_of=as_of,
        principal=principal,
        action="read_report",
        object_name="recon_report",
        row_count=len(visible_outcomes) + len(visible_ex),
        policy_version=policies.version,
    )
    return report


def governed_exceptions(
    store: Store, as_of: date, principal: Principal, status: str | None = None, match_spec: str | None = None
) -> list[dict]:
    config = store.load_config()
    rows = [governed_exception_row(e) for e in store.exceptions().list_exceptions(as_of, status, match_spec)]
    visible, _ = store.governance(config.registry).read(
        rows, principal, {"exceptions"}, as_of=as_of, action="read_exceptions", object_name="exceptions",
        detail={"status": status, "match_spec": match_spec} if (status or match_spec) else None,
    )
    return visible


def governed_aging(store: Store, as_of: date, principal: Principal) -> dict:
    config = store.load_config()
    store.require_run(as_of)
    path = store.aging_report_path(as_of)
    report = load_json(path) if path.exists() else {"rows": [], "quarantined": []}
    rows = report["rows"]
    quarantined = report.get("quarantined", [])
    gov = store.governance(config.registry)
    visible, _ = gov.read(
        rows + [dict(q, _quarantined=True) for q in quarantined],
        principal, {"inventory_aging", "inventory_snapshots"},
        as_of=as_of, action="read_report", object_name="inventory_aging",
    )
    vis_rows = [r for r in visible if not r.get("_quarantined")]
    vis_q = [{k: v for k, v in r.items() if k != "_quarantined"} for r in visible if r.get("_quarantined")]
    totals = {b: sum(r[b] for r in vis_rows) for b in AGING_BUCKETS}
    return {
        "as_of": as_of.isoformat(),
        "rows": vis_rows,
        "totals": totals,
        "over_90": [r for r in vis_rows if r[">90"] > 0],
        "quarantined": vis_q,
    }


def governed_queue(store: Store, as_of: date, principal: Principal) -> list[dict]:
    config = store.load_config()
    store.require_run(as_of)
    flags = store.flags.flags(as_of)
    rows = [dict(f.to_dict(), disposition=f.disposition) for f in flags]
    visible, _ = store.governance(config.registry).read(
        rows, principal, {"inventory_flags"}, as_of=as_of, action="read_report", object_name="inventory_flags",
    )
    keep = {r["flag_id"] for r in visible}
    chosen = [f for f in flags if f.flag_id in keep]
    return [item.to_dict() for item in investigation_queue(chosen, as_of)]


# -- metric data ------------------------------------------------------------------
class StoreProvider:
    """Rows for metric sources as of a date, read from run outputs and the staged tier."""

    def __init__(self, store: Store):
        self.store = store
        self._kept: dict[date, list[StagedRecord]] = {}

    def _records(self, as_of: date) -> list[StagedRecord]:
        if as_of not in self._kept:
            kept, _ = dedup_records(self.store.staged.load_pass(through=as_of))
            self._kept[as_of] = kept
        return self._kept[as_of]

    def rows(self, source: str, as_of: date) -> list[dict]:
        self.store.require_run(as_of)
        if source == "recon_outcomes":
            exceptions = self.store.exceptions().list_exceptions(as_of)
            return read_ndjson(self.store.outcomes_path(as_of)) + exception_rows(exceptions)
        if source == "inventory_aging":
            rows = read_ndjson(self.store.aging_rows_path(as_of))
            return [dict(r, snapshot_date=date.fromisoformat(r["snapshot_date"])) for r in rows]
        kind = "provisioning_event" if source == "activations" else source
        if kind not in ENTITY_KINDS:
            raise ValidationError(f"unknown metric source {source!r}")
        return [
            {
                **r.fields,
                "event_date": r.event_date,
                "lineage_id": r.lineage_id,
                "source_id": r.source_id,
            }
            for r in self._records(as_of)
            if r.entity_kind == kind
        ]

    def versions(self, as_of: date) -> dict[str, list[str]]:
        return {k: sorted(v) for k, v in sorted(self.store.staged.versions_through(as_of).items())}


def evaluator(store: Store) -> Evaluator:
    config = store.load_config()
    return Evaluator(config.registry, StoreProvider(store), store.governance(config.registry))


def metric_json(result: dict) -> str:
    """The one serialization every report path uses for a metric result."""
    return canonical_json(result)
