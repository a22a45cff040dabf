"""Seeded multi-source scenarios with injected faults and a ground-truth manifest.

Each subscriber yields a service order, a provisioning event, an invoice
inside the billing cycle and a payment. The supply chain yields, per day
and (material, location), a purchase order, a receipt and an issuance of
the same quantity plus an installation a few days later, so on-hand stays
flat and a clean scenario raises no anomaly flags. Every record is
ingested on its own business date unless a fault says otherwise.

The manifest is written from the generator's own bookkeeping and never
from engine output. Each fault entry lists the findings the engine is
expected to report for that key and the as_of interval over which each
holds.
"""

from __future__ import annotations

import csv
import io
import json
import random
import shutil
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal
from pathlib import Path

from .._common import ConfigError, atomic_write, canonical_json, digest_obj, load_json, sha256_hex
from ..catalog import ENTITY_KINDS

FAULT_KINDS = ("silent_mapping_failure", "late_arrival", "duplicate_fanout", "schema_drift", "quantity_typo")
SOURCE_GROUPS = ("orders", "provisioning", "billing", "payments", "supply_chain")
DEFAULT_TARGETS = {
    "silent_mapping_failure": "invoice_line",
    "late_arrival": "invoice_line",
    "duplicate_fanout": "invoice_line",
    "schema_drift": "invoice_line",
    "quantity_typo": "receiving",
}
ALLOWED_TARGETS = {
    "silent_mapping_failure": ("invoice_line",),
    "late_arrival": ("invoice_line",),
    "duplicate_fanout": ("invoice_line", "receiving"),
    "schema_drift": ("invoice_line",),
    "quantity_typo": ("receiving",),
}
PLANS = {"basic": Decimal("49.99"), "plus": Decimal("69.99"), "pro": Decimal("89.99")}
STATUS_SPELLINGS = ("active", "Active", "act")
CROSSWALK_NAME = "circuit_to_account"

# (entity_kind, source_id, format)
EMITTERS = {
    "service_order": ("oms", "csv"),
    "provisioning_event": ("prov", "ndjson"),
    "invoice_line": ("billing", "csv"),
    "payment_settlement": ("pay", "ndjson"),
    "purchase_order": ("erp", "csv"),
    "receiving": ("erp", "csv"),
    "issuance": ("erp", "csv"),
    "installation": ("erp", "ndjson"),
}


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    count: int | None = None
    rate: float | None = None
    target: str = ""
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSpec":
        kind = d.get("kind")
        if kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {kind!r}; expected one of {list(FAULT_KINDS)}")
        count, rate = d.get("count"), d.get("rate")
        if (count is None) == (rate is None):
            raise ConfigError(f"fault {kind}: give exactly one of count or rate")
        if count is not None and (not isinstance(count, int) or count < 0):
            raise ConfigError(f"fault {kind}: count must be a non-negative integer")
        if rate is not None and not 0 <= float(rate) <= 1:
            raise ConfigError(f"fault {kind}: rate must be within [0, 1]")
        target = d.get("target", DEFAULT_TARGETS[kind])
        if target not in ALLOWED_TARGETS[kind]:
            raise ConfigError(f"fault {kind}: target must be one of {list(ALLOWED_TARGETS[kind])}")
        params = dict(d.get("params", {}))
        if kind == "schema_drift":
            mode = params.setdefault("mode", "drop")
            if mode not in ("drop", "add"):
                raise ConfigError("schema_drift mode must be drop or add")
            schema = ENTITY_KINDS[target]
            droppable = sorted((set(schema.key_fields) | {schema.date_field}) - set(schema.natural_key))
            if mode == "drop":
                fname = params.setdefault("field", droppable[0])
                if fname not in droppable:
                    raise ConfigError(f"schema_drift drop field must be one of {droppable}")
            else:
                params.setdefault("field", "promo_code")
        elif kind == "late_arrival":
            params.setdefault("days", 30)
            if int(params["days"]) < 1:
                raise ConfigError("late_arrival days must be >= 1")
        elif kind == "duplicate_fanout":
            params.setdefault("copies", 2)
            if int(params["copies"]) < 2:
                raise ConfigError("duplicate_fanout copies must be >= 2")
        elif kind == "quantity_typo":
            params.setdefault("multiplier", 10)
            if int(params["multiplier"]) < 2:
                raise ConfigError("quantity_typo multiplier must be >= 2")
        return cls(kind, count, None if rate is None else float(rate), target, params)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "target": self.target, "params": dict(sorted(self.params.items()))}
        if self.count is not None:
            d["count"] = self.count
        else:
            d["rate"] = self.rate
        return d

    def resolve(self, population: int) -> int:
        n = self.count if self.count is not None else round(self.rate * population)
        if n > population:
            raise ConfigError(f"fault {self.kind}: count {n} exceeds the eligible population of {population}")
        return n


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    subscribers: int = 100
    start: date = date(2026, 1, 1)
    days: int = 60
    billing_cycle_days: int = 30
    window_days: int = 30
    regions: tuple[str, ...] = ("NW", "SW", "NE", "SE")
    sources: tuple[str, ...] = SOURCE_GROUPS
    materials: tuple[str, ...] = ("000123", "000456", "007890")
    base_stock: int = 200
    trial_rate: float = 0.1
    min_observations: int = 10
    faults: tuple[FaultSpec, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        kw = dict(d)
        if "start" in kw:
            kw["start"] = date.fromisoformat(kw["start"])
        for k in ("regions", "sources", "materials"):
            if k in kw:
                kw[k] = tuple(kw[k])
        kw["faults"] = tuple(FaultSpec.from_dict(f) for f in d.get("faults", ()))
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Path) -> "ScenarioConfig":
        return cls.from_dict(load_json(path))

    def validate(self) -> None:
        if self.subscribers < 0 or self.subscribers > 99999:
            raise ConfigError("subscribers must be within [0, 99999]")
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        if self.billing_cycle_days < 2:
            raise ConfigError("billing_cycle_days must be >= 2")
        if self.billing_cycle_days > self.window_days:
            raise ConfigError("billing_cycle_days cannot exceed window_days; clean invoices would be late")
        unknown = set(self.sources) - set(SOURCE_GROUPS)
        if unknown:
            raise ConfigError(f"unknown source groups {sorted(unknown)}")
        if not self.regions or any(len(r) != 2 or not r.isalpha() or not r.isupper() for r in self.regions):
            raise ConfigError("regions must be two upper-case letters")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "subscribers": self.subscribers,
            "start": self.start.isoformat(),
            "days": self.days,
            "billing_cycle_days": self.billing_cycle_days,
            "window_days": self.window_days,
            "regions": list(self.regions),
            "sources": list(self.sources),
            "materials": list(self.materials),
            "base_stock": self.base_stock,
            "trial_rate": self.trial_rate,
            "min_observations": self.min_observations,
            "faults": [f.to_dict() for f in self.faults],
        }


# -- records --------------------------------------------------------------------
@dataclass
class Row:
    kind: str
    ingest: date
    values: dict
    late: bool = False


@dataclass
class Subscriber:
    n: int
    region: str
    plan: str
    trial: bool
    service: date
    activation: date
    invoice: date
    settled: date
    status: str

    @property
    def order_id(self) -> str:
        return f"O{self.n:05d}"

    @property
    def circuit(self) -> str:
        return f"41{self.n:08d}"

    @property
    def account(self) -> str:
        return self.region + self.circuit

    @property
    def invoice_id(self) -> str:
        return f"I{self.n:05d}"

    @property
    def payment_ref(self) -> str:
        return f"P{self.n:05d}"


def _d(day: date, ahead: int) -> date:
    return day + timedelta(days=ahead)


def _us_date(day: date) -> str:
    return f"{day.month:02d}/{day.day:02d}/{day.year:04d}"


class _Scenario:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.window = timedelta(days=cfg.window_days)
        self.subs: list[Subscriber] = []
        self.faulted: set[int] = set()
        self.rows: list[Row] = []
        self.entries: list[dict] = []
        self.drift: dict[tuple[str, date], dict] = {}  # (kind, ingest day) -> params
        self.skip_invoice: set[int] = set()
        self.late: dict[int, int] = {}
        self.invoice_copies: dict[int, int] = {}
        self.receipts: list[dict] = []

    # -- base population ---------------------------------------------------
    def build_subscribers(self) -> None:
        c, rng = self.cfg, self.rng
        plans = sorted(PLANS)
        for n in range(1, c.subscribers + 1):
            service = _d(c.start, rng.randrange(c.days))
            activation = _d(service, rng.randint(0, 3))
            invoice = _d(activation, rng.randint(1, c.billing_cycle_days - 1))
            settled = _d(invoice, rng.randint(1, 15))
            self.subs.append(
                Subscriber(
                    n, rng.choice(c.regions), rng.choice(plans), rng.random() < c.trial_rate,
                    service, activation, invoice, settled, rng.choice(STATUS_SPELLINGS),
                )
            )

    def build_supply(self) -> None:
        c, rng = self.cfg, self.rng
        for day_i in range(c.days):
            day = _d(c.start, day_i)
            stamp = day.strftime("%Y%m%d")
            for mat in c.materials:
                for loc in c.regions:
                    qty = rng.randint(5, 20)
                    tag = f"{stamp}-{mat.lstrip('0') or '0'}-{loc}"
                    po = f"PO-{tag}"
                    unit_cost = Decimal(rng.randint(100, 900)) / 100
                    self.rows.append(Row("purchase_order", day, {
                        "po_id": po, "material_code": mat, "po_date": day.isoformat(),
                        "quantity": str(qty), "unit_cost": str(unit_cost), "location_id": loc,
                    }))
                    receipt = {
                        "receipt_id": f"R-{tag}", "po_id": po, "material_code": mat,
                        "received_date": day.isoformat(), "quantity": qty + (c.base_stock if day_i == 0 else 0),
                        "location_id": loc, "_day_index": day_i,
                    }
                    self.receipts.append(receipt)
                    self.rows.append(Row("issuance", day, {
                        "issue_id": f"X-{tag}", "po_id": po, "material_code": mat, "job_id": f"J-{tag}",
                        "issued_date": day.isoformat(), "quantity": str(qty), "location_id": loc,
                    }))
                    inst_day = _d(day, rng.randint(0, 5))
                    self.rows.append(Row("installation", inst_day, {
                        "install_id": f"N-{tag}", "po_id": po, "material_code": mat, "job_id": f"J-{tag}",
                        "installed_date": inst_day.isoformat(), "quantity": qty,
                        "cost": str(unit_cost * qty + rng.randint(50, 500)), "passings": rng.randint(1, 12),
                        "location_id": loc,
                    }))

    # -- faults -----------------------------------------------------------------
    def eligible_subs(self) -> list[Subscriber]:
        return [s for s in self.subs if s.n not in self.faulted]

    def _entry(self, spec: FaultSpec, key_entity: str, key: str, expected: list[dict], **extra) -> None:
        self.entries.append({
            "kind": spec.kind, "target": spec.target, "params": dict(sorted(spec.params.items())),
            "key_entity": key_entity, "key": key, "expected": expected, **extra,
        })

    @staticmethod
    def _exp(channel: str, key: str, start: date, until: date | None = None) -> dict:
        return {"channel": channel, "key": key, "from": start.isoformat(), "until": until.isoformat() if until else None}

    def unbilled(self, s: Subscriber) -> dict:
        return self._exp("exception:activation_billing:unmatched:open", s.order_id, s.activation + self.window + timedelta(days=1))

    def apply_schema_drift(self, spec: FaultSpec) -> None:
        by_day: dict[date, list[Subscriber]] = {}
        for s in self.eligible_subs():
            by_day.setdefault(s.invoice, []).append(s)
        days = sorted(by_day)
        chosen = sorted(self.rng.sample(days, spec.resolve(len(days))))
        for day in chosen:
            self.drift[(spec.target, day)] = spec.params
            for s in by_day[day]:
                self.faulted.add(s.n)
                expected = []
                if spec.params["mode"] == "drop":
                    reason = f"schema_drift:missing:{spec.params['field']}"
                    expected = [
                        self._exp(f"quarantine:{reason}", s.invoice_id, day),
                        self.unbilled(s),
                        self._exp("exception:payment_orphans:orphaned:open", s.payment_ref, s.settled),
                    ]
                self._entry(spec, "invoice_line", s.invoice_id, expected, drift_day=day.isoformat())

    def apply_subscriber_fault(self, spec: FaultSpec) -> None:
        pool = self.eligible_subs()
        chosen = sorted(self.rng.sample(pool, spec.resolve(len(pool))), key=lambda s: s.n)
        for s in chosen:
            self.faulted.add(s.n)
            if spec.kind == "silent_mapping_failure":
                self.skip_invoice.add(s.n)
                self._entry(spec, "provisioning_event", s.order_id, [self.unbilled(s)])
            elif spec.kind == "late_arrival":
                days = int(spec.params["days"])
                self.late[s.n] = days
                arrival = _d(s.invoice, days)
                expiry = s.activation + self.window
                expected = []
                if arrival > expiry:
                    opened = expiry + timedelta(days=1)
                    expected = [
                        self._exp("exception:activation_billing:unmatched:open", s.order_id, opened, arrival),
                        self._exp("exception:activation_billing:unmatched:matched_late", s.order_id, arrival),
                    ]
                self._entry(spec, "provisioning_event", s.order_id, expected, arrival=arrival.isoformat())
            else:  # duplicate_fanout on invoices
                self.invoice_copies[s.n] = int(spec.params["copies"])
                self._entry(spec, "invoice_line", s.invoice_id, [
                    self._exp("exception:dedup:invoice_line:duplicate:open", s.invoice_id, s.invoice)
                ])

    def apply_receipt_fault(self, spec: FaultSpec) -> None:
        if spec.kind == "duplicate_fanout":
            pool = [r for r in self.receipts if "_fault" not in r]
            chosen = sorted(self.rng.sample(range(len(pool)), spec.resolve(len(pool))))
            for i in chosen:
                r = pool[i]
                r["_fault"] = ("copies", int(spec.params["copies"]))
                self._entry(spec, "receiving", r["receipt_id"], [
                    self._exp("exception:dedup:receiving:duplicate:open", r["receipt_id"], date.fromisoformat(r["received_date"]))
                ])
            return
        # quantity_typo: at most one per series, late enough to have a baseline
        first_ok = self.cfg.min_observations + 1
        series: dict[tuple[str, str], list[dict]] = {}
        for r in self.receipts:
            if r["_day_index"] >= first_ok and "_fault" not in r:
                series.setdefault((r["material_code"], r["location_id"]), []).append(r)
        keys = sorted(series)
        for key in sorted(self.rng.sample(keys, spec.resolve(len(keys)))):
            r = self.rng.choice(series[key])
            r["_fault"] = ("multiplier", int(spec.params["multiplier"]))
            series_key = f"{key[0].lstrip('0') or '0'}|{key[1]}"
            self._entry(spec, "receiving", r["receipt_id"], [
                self._exp("flag", series_key, date.fromisoformat(r["received_date"]))
            ], series=series_key)

    # -- emission ----------------------------------------------------------------
    def subscriber_rows(self) -> None:
        groups = set(self.cfg.sources)
        for s in self.subs:
            if "orders" in groups:
                self.rows.append(Row("service_order", s.service, {
                    "order_id": s.order_id, "subscriber_id": f"S{s.n:05d}", "service_date": s.service.isoformat(),
                    "plan": s.plan, "location_id": s.region,
                }))
            if "provisioning" in groups:
                self.rows.append(Row("provisioning_event", s.activation, {
                    "order_id": s.order_id.lower(), "subscriber_id": f"S{s.n:05d}", "circuit_id": s.circuit,
                    "activation_date": s.activation.isoformat(), "status": s.status,
                    "trial": s.trial, "location_id": s.region,
                }))
            if s.n in self.skip_invoice:
                continue
            arrival = _d(s.invoice, self.late.get(s.n, 0))
            if "billing" in groups:
                inv = {
                    "invoice_id": s.invoice_id, "account_id": s.account, "subscriber_id": f"S{s.n:05d}",
                    "order_id": s.order_id, "invoice_date": _us_date(s.invoice), "amount": str(PLANS[s.plan]),
                    "location_id": s.region,
                }
                for _ in range(self.invoice_copies.get(s.n, 1)):
                    self.rows.append(Row("invoice_line", arrival, dict(inv), late=s.n in self.late))
            if "payments" in groups:
                self.rows.append(Row("payment_settlement", max(s.settled, arrival), {
                    "payment_ref": s.payment_ref, "invoice_id": s.invoice_id, "settled_date": s.settled.isoformat(),
                    "amount": str(PLANS[s.plan]), "location_id": s.region,
                }))

    def receipt_rows(self) -> None:
        if "supply_chain" not in self.cfg.sources:
            self.rows = [r for r in self.rows if EMITTERS[r.kind][0] != "erp"]
            return
        for r in self.receipts:
            values = {k: v for k, v in r.items() if not k.startswith("_")}
            copies = 1
            fault = r.get("_fault")
            if fault and fault[0] == "multiplier":
                values["quantity"] = values["quantity"] * fault[1]
            elif fault:
                copies = fault[1]
            values["quantity"] = str(values["quantity"])
            for _ in range(copies):
                self.rows.append(Row("receiving", date.fromisoformat(r["received_date"]), dict(values)))


def _render(kind: str, fmt: str, rows: list[dict], drift: dict | None) -> bytes:
    columns = list(rows[0])
    if drift:
        if drift["mode"] == "drop":
            columns = [c for c in columns if c != drift["field"]]
        else:
            columns.append(drift["field"])
            rows = [dict(r, **{drift["field"]: "X"}) for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue().encode("utf-8")
    return "".join(json.dumps({c: r[c] for c in columns}) + "\n" for r in rows).encode("utf-8")


def generate(config: ScenarioConfig, out: Path) -> dict:
    """Write extracts, the scenario crosswalk and ``manifest.json`` under ``out``."""
    sc = _Scenario(config)
    sc.build_subscribers()
    sc.build_supply()
    specs = sorted(config.faults, key=lambda f: f.kind != "schema_drift")
    for spec in specs:
        if spec.kind == "schema_drift":
            sc.apply_schema_drift(spec)
        elif spec.target == "receiving":
            sc.apply_receipt_fault(spec)
        else:
            sc.apply_subscriber_fault(spec)
    sc.subscriber_rows()
    sc.receipt_rows()

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[tuple[str, date, str, bool], list[dict]] = {}
    for row in sc.rows:
        files.setdefault((row.kind, row.ingest, EMITTERS[row.kind][0], row.late), []).append(row.values)
    schedule = []
    counts: dict[str, int] = {}
    for (kind, day, source, late) in sorted(files, key=lambda k: (k[1], k[2], k[0], k[3])):
        rows = files[(kind, day, source, late)]
        fmt = EMITTERS[kind][1]
        drift = None if late else sc.drift.get((kind, day))
        name = f"{kind}{'-late' if late else ''}.{fmt}"
        rel = f"{source}/{day.isoformat()}/{name}"
        body = _render(kind, fmt, rows, drift)
        atomic_write(out / rel, body)
        counts[kind] = counts.get(kind, 0) + len(rows)
        schedule.append({
            "file": rel, "source": source, "entity": kind, "as_of": day.isoformat(), "format": fmt,
            "rows": len(rows), "sha256": sha256_hex(body),
        })

    crosswalk = {
        "name": CROSSWALK_NAME,
        "source_pattern": r"\d{10}",
        "target_pattern": r"[A-Z]{2}\d{10}",
        "entries": {s.circuit: s.account for s in sc.subs},
    }
    atomic_write(out / f"{CROSSWALK_NAME}.json", json.dumps(crosswalk, indent=1, sort_keys=True) + "\n")

    last_ingest = max((date.fromisoformat(f["as_of"]) for f in schedule), default=config.start)
    expiries = [s.activation + sc.window + timedelta(days=1) for s in sc.subs]
    froms = [date.fromisoformat(x["from"]) for e in sc.entries for x in e["expected"]]
    settle = max([last_ingest, *expiries, *froms])
    manifest = {
        "config": config.to_dict(),
        "config_digest": digest_obj(config.to_dict()),
        "start": config.start.isoformat(),
        "settle_as_of": settle.isoformat(),
        "counts": dict(sorted(counts.items())),
        "crosswalk": f"{CROSSWALK_NAME}.json",
        "files": schedule,
        "faults": sc.entries,
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_scenario(store, directory: Path, through: date | None = None) -> int:
    """Install the scenario crosswalk and ingest scheduled files up to ``through`` not yet loaded."""
    directory = Path(directory)
    store.require_init()
    manifest = load_json(directory / "manifest.json")
    dst = store.config_dir / "crosswalks" / f"{CROSSWALK_NAME}.json"
    src = directory / manifest["crosswalk"]
    if not dst.exists() or dst.read_bytes() != src.read_bytes():
        shutil.copyfile(src, dst)
    raw = store.raw
    loaded = raw.batch_hashes()
    n = 0
    for f in manifest["files"]:
        if through is not None and date.fromisoformat(f["as_of"]) > through:
            continue
        if f["sha256"] in loaded:
            continue
        raw.load_batch(directory / f["file"], f["source"], f["entity"], f["as_of"], f["format"])
        n += 1
    return n


def manifest_digest(manifest: dict) -> str:
    return sha256_hex(canonical_json(manifest))
