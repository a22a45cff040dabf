"""Acceptance criteria, each checked end to end against an independent oracle.

Every test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import json
import math
import random
import statistics
import time
from collections import Counter
from datetime import date, timedelta

import pytest
from conftest import ingest, install_crosswalk, synth_store

from gera import pipeline
from gera.cli import main
from gera.governance import Principal
from gera.inventory import AnomalyBaseline, Movement, aging_bucket, bucket_totals, fifo_age, take_snapshot
from gera.inventory.detectors import iqr_score, modified_zscore, zscore, zscore_flags
from gera.reconcile import GrainSpec, GrainViolation, dedup_and_aggregate, grain_join
from gera.synth import ScenarioConfig, generate, load_scenario, score, store_findings

D = date.fromisoformat
ADMIN = Principal("admin")
REGIONS = ("NW", "SW", "NE", "SE")


# -- independent oracles -------------------------------------------------------------
def o_mean_sd(xs):
    m = math.fsum(xs) / len(xs)
    return m, math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def o_median(xs):
    s = sorted(xs)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def o_quartiles(xs):
    s = sorted(xs)
    n = len(s)
    return o_median(s[: n // 2]), o_median(s[(n + 1) // 2:])


def o_fifo_units(movements, snap):
    """Unit-by-unit FIFO: a queue of receipt dates, issues pop from the front."""
    units = []
    for m in sorted((m for m in movements if m.quantity > 0), key=lambda m: (m.event_date, m.lineage_id)):
        units.extend([m.event_date] * m.quantity)
    issued = sum(-m.quantity for m in movements if m.quantity < 0)
    if issued > len(units):
        return None
    return Counter((d, min(3, max(0, ((snap - d).days - 1) // 30))) for d in units[issued:])


def rel_close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def store_files(root, *parts):
    base = root.joinpath(*parts)
    return {p.relative_to(base).as_posix(): p.read_bytes() for p in sorted(base.rglob("*")) if p.is_file()}


# -- 1 ----------------------------------------------------------------------------------
@pytest.mark.criterion(1, "fault-injection recall and precision")
def test_fault_injection_recall_precision(tmp_path):
    store, manifest, as_of = synth_store(tmp_path, {
        "seed": 1, "subscribers": 500, "faults": [{"kind": "silent_mapping_failure", "count": 25}],
    })
    state = store.exceptions().state(as_of).values()
    unmatched = {e.natural_key["order_id"] for e in state if e.category == "unmatched"}
    injected = {e["key"] for e in manifest["faults"]}
    assert len(injected) == 25 and unmatched == injected
    result = score(store_findings(store, as_of), manifest, as_of)
    s = result["by_kind"]["silent_mapping_failure"]
    assert (s["expected"], s["true_positive"], s["recall"], s["precision"]) == (25, 25, 1.0, 1.0)
    assert result["unexplained"] == []


# -- 2 ----------------------------------------------------------------------------------
@pytest.mark.criterion(2, "clean scenario soundness")
def test_clean_scenario_soundness(tmp_path):
    store, manifest, as_of = synth_store(tmp_path, {"seed": 2, "subscribers": 300})
    assert manifest["faults"] == []
    assert store.exceptions().state(as_of) == {}
    assert store.flags.flags(as_of) == []
    assert store.staged.load_quarantine(through=as_of) == []
    summary = store.require_run(as_of)
    assert summary["exceptions"]["total"] == 0 and summary["inventory"]["flags"] == 0


# -- 3 ----------------------------------------------------------------------------------
def _lifecycle_store(store):
    install_crosswalk(store, {"4155550101": "NW4155550101"})
    ingest(store, "prov", "provisioning_event", "2026-01-02", [{
        "order_id": "O2", "subscriber_id": "S2", "circuit_id": "4155550101", "activation_date": "2026-01-02",
        "status": "active", "trial": False, "location_id": "NW",
    }])
    return store


@pytest.mark.criterion(3, "exception lifecycle replay")
@pytest.mark.parametrize("late", ["2026-02-15", "2026-02-16", "2026-03-20", "2026-06-30"])
def test_lifecycle_replay(store, late):
    _lifecycle_store(store)
    activation, window, threshold = D("2026-01-02"), 30, 14
    expiry = activation + timedelta(days=window)
    pipeline.run(store, expiry)
    assert store.exceptions().state(expiry) == {}  # an invoice dated on the expiry day still matches
    for day in ("2026-02-02", "2026-02-14", "2026-02-15"):
        pipeline.run(store, D(day))
        (ex,) = store.exceptions().state(D(day)).values()
        age = (D(day) - expiry).days
        assert (ex.opened_as_of, ex.status, ex.age_days, ex.escalated) == (expiry, "open", age, age >= threshold)
    assert expiry == D("2026-02-01")
    assert [store.exceptions().state(D(d))[ex.exception_id].escalated for d in ("2026-02-14", "2026-02-15")] == [False, True]
    ingest(store, "billing", "invoice_line", late, [{
        "invoice_id": "I2", "account_id": "NW4155550101", "subscriber_id": "S2", "order_id": "O2",
        "invoice_date": late, "amount": "49.99", "location_id": "NW",
    }])
    pipeline.run(store, D(late))
    (ex,) = store.exceptions().state(D(late)).values()
    assert (ex.status, ex.closed_as_of, ex.was_escalated) == ("matched_late", D(late), True)


@pytest.mark.criterion(3, "exception lifecycle replay")
def test_lifecycle_late_before_escalation(store):
    _lifecycle_store(store)
    pipeline.run(store, D("2026-02-05"))
    ingest(store, "billing", "invoice_line", "2026-02-10", [{
        "invoice_id": "I2", "account_id": "NW4155550101", "subscriber_id": "S2", "order_id": "O2",
        "invoice_date": "2026-02-10", "amount": "49.99", "location_id": "NW",
    }])
    pipeline.run(store, D("2026-02-10"))
    (ex,) = store.exceptions().state(D("2026-02-10")).values()
    assert (ex.opened_as_of, ex.status, ex.closed_as_of, ex.was_escalated) == (
        D("2026-02-01"), "matched_late", D("2026-02-10"), False)


# -- 4 ----------------------------------------------------------------------------------
@pytest.mark.criterion(4, "idempotency and look-back equivalence")
def test_idempotency_and_lookback_equivalence(tmp_path):
    cfg = ScenarioConfig.from_dict({"seed": 4, "subscribers": 80, "days": 60, "faults": [
        {"kind": "late_arrival", "count": 6, "params": {"days": 20}},
        {"kind": "silent_mapping_failure", "count": 3},
        {"kind": "quantity_typo", "count": 2},
    ]})
    manifest = generate(cfg, tmp_path / "scenario")
    final = D(manifest["settle_as_of"])

    daily = pipeline.Store(tmp_path / "daily")
    daily.init()
    day = cfg.start
    while day <= final:
        load_scenario(daily, tmp_path / "scenario", through=day)
        pipeline.run(daily, day)
        day += timedelta(days=1)

    batch = pipeline.Store(tmp_path / "batch")
    batch.init()
    load_scenario(batch, tmp_path / "scenario")
    pipeline.run(batch, final, lookback=(final - cfg.start).days)

    def reports(s):
        return [json.dumps(x, sort_keys=True) for x in (
            pipeline.governed_recon_report(s, final, ADMIN),
            pipeline.governed_exceptions(s, final, ADMIN),
            pipeline.governed_aging(s, final, ADMIN),
            pipeline.governed_queue(s, final, ADMIN),
        )]

    for parts in (("recon", "exceptions.ndjson"), ("inventory", "flags.ndjson")):
        assert daily.root.joinpath(*parts).read_bytes() == batch.root.joinpath(*parts).read_bytes()
    assert daily.outcomes_path(final).read_bytes() == batch.outcomes_path(final).read_bytes()
    assert store_files(daily.root, "inventory", "snapshots") == store_files(batch.root, "inventory", "snapshots")
    assert reports(daily) == reports(batch)
    late = {e.natural_key["order_id"] for e in daily.exceptions().state(final).values() if e.status == "matched_late"}
    expected = {
        e["key"] for e in manifest["faults"]
        if any(x["channel"].endswith(":matched_late") for x in e["expected"])
    }
    assert late == expected and late

    before = store_files(batch.root)
    pipeline.run(batch, final, lookback=(final - cfg.start).days)
    assert store_files(batch.root) == before


# -- 5 ----------------------------------------------------------------------------------
@pytest.mark.criterion(5, "FIFO conservation and unit oracle")
def test_fifo_conservation_and_oracle():
    rng = random.Random(5)
    snap = D("2026-06-30")
    for case in range(200):
        movements = []
        for key in [(f"M{k}", rng.choice(REGIONS)) for k in range(rng.randint(1, 3))]:
            for i in range(rng.randint(1, 12)):
                d = snap - timedelta(days=rng.randint(0, 150))
                qty = rng.randint(1, 25) * (1 if rng.random() < 0.65 else -1)
                movements.append(Movement(key[0], key[1], d, d, qty, f"c{case}-{key}-{i}"))
        allocs, negative = fifo_age(snap, movements)
        on_hand = {(s.material_id, s.location_id): s.quantity_on_hand for s in take_snapshot(movements, snap)}
        totals = bucket_totals(allocs)
        keys = {(m.material_id, m.location_id) for m in movements}
        for key in keys:
            mine = [m for m in movements if (m.material_id, m.location_id) == key]
            expected = o_fifo_units(mine, snap)
            if expected is None:
                assert key in negative
                continue
            got = Counter()
            for a in allocs:
                if (a.material_id, a.location_id) == key:
                    got[(a.received_date, ("0-30", "31-60", "61-90", ">90").index(a.bucket))] += a.remaining_qty
            assert got == expected
            assert sum(totals.get(key, {}).values()) == on_hand.get(key, 0) == sum(expected.values())
    (boundary,) = fifo_age(snap, [Movement("M", "NW", snap - timedelta(30), snap - timedelta(30), 7, "b")])[0]
    assert (boundary.age_days, boundary.bucket, aging_bucket(31)) == (30, "0-30", "31-60")


# -- 6 ----------------------------------------------------------------------------------
@pytest.mark.criterion(6, "statistics oracle")
def test_statistics_oracle():
    rng = random.Random(6)
    for _ in range(100):
        n = rng.randint(10, 30)
        window = [round(rng.gauss(100, rng.uniform(0.5, 20)), rng.choice((0, 2))) for _ in range(n)]
        x = rng.choice([rng.gauss(100, 40), rng.uniform(-500, 500)])
        b = AnomalyBaseline.of(window)
        m, sd = o_mean_sd(window)
        med = o_median(window)
        mad = o_median([abs(v - med) for v in window])
        q1, q3 = o_quartiles(window)
        assert rel_close(zscore(x, b), (x - m) / sd)
        if mad:
            assert rel_close(modified_zscore(x, b), 0.6745 * (x - med) / mad)
        iqr = q3 - q1
        assert rel_close(b.q1, q1) and rel_close(b.q3, q3)
        if iqr:
            ref = (x - q3) / iqr if x > q3 else (q1 - x) / iqr if x < q1 else 0.0
            assert rel_close(iqr_score(x, b), ref)

    # flag set of a whole series equals |x - mean| / s > 3 over the trailing window
    values = [rng.gauss(50, 3) for _ in range(120)]
    for i in (40, 77, 101):
        values[i] += 40
    series = [(D("2026-01-01") + timedelta(i), v) for i, v in enumerate(values)]
    expected = set()
    for i in range(10, len(values)):
        w = values[max(0, i - 30):i]
        mu, s = o_mean_sd(w)
        if abs((values[i] - mu) / s) > 3:
            expected.add(series[i][0])
    got = {f.snapshot_date for f in zscore_flags(series).flags}
    assert got == expected and len(got) >= 3

    flat = AnomalyBaseline.of([7.0] * 12)
    assert zscore(7.0, flat) == 0 and modified_zscore(7.0, flat) == 0 and iqr_score(7.0, flat) == 0
    assert zscore(8.0, flat) == math.inf and modified_zscore(6.0, flat) == -math.inf and iqr_score(8.0, flat) == math.inf
    mad_zero = AnomalyBaseline.of([5, 5, 5, 5, 5, 5, 9, 1, 5, 5])
    assert mad_zero.mad == 0 and modified_zscore(5, mad_zero) == 0 and modified_zscore(6, mad_zero) == math.inf


# -- 7 ----------------------------------------------------------------------------------
@pytest.mark.criterion(7, "MAD robustness on a contaminated window")
def test_mad_robustness():
    window = [100, 101, 99, 100, 102, 98, 100, 101, 99, 1000]
    x = 110
    b = AnomalyBaseline.of(window)
    z, M = zscore(x, b), modified_zscore(x, b)
    med = statistics.median(window)
    assert rel_close(z, (x - statistics.mean(window)) / statistics.stdev(window))
    assert rel_close(M, 0.6745 * (x - med) / statistics.median(abs(v - med) for v in window))
    assert z <= 3 and M > 3.5


# -- 8 ----------------------------------------------------------------------------------
ACTIVATIONS = [
    ("S1", "active", False, "NW"), ("S2", "active", False, "NW"), ("S3", "Active", False, "NW"),
    ("S4", "act", False, "SW"), ("S5", "active", False, "SW"), ("S6", "active", True, "NW"),
    ("S7", "suspended", False, "SW"), ("S8", "active", None, "NW"),
]


@pytest.mark.criterion(8, "single metric definition across report paths")
def test_single_definition_metric(tmp_path, monkeypatch, capsys):
    store = pipeline.Store(tmp_path / "store")
    store.init()
    install_crosswalk(store, {f"41555501{i:02d}": f"{r}41555501{i:02d}" for i, (_, _, _, r) in enumerate(ACTIVATIONS)})
    rows = [
        {"order_id": f"O{i}", "subscriber_id": sid, "circuit_id": f"41555501{i:02d}", "activation_date": "2026-01-02",
         "status": status, "trial": trial, "location_id": region}
        for i, (sid, status, trial, region) in enumerate(ACTIVATIONS)
    ]
    ingest(store, "prov", "provisioning_event", "2026-01-02", rows)
    brute = len({r["subscriber_id"] for r in rows if r["status"].lower() in ("active", "act") and r["trial"] is False})
    assert brute == 5

    monkeypatch.setenv("GERA_STORE", str(store.root))
    assert main(["run", "--as-of", "2026-01-03"]) == 0
    capsys.readouterr()
    assert main(["metric", "eval", "active_subscriber_count", "--as-of", "2026-01-03", "--role", "admin", "--json"]) == 0
    eval_line = capsys.readouterr().out
    assert main(["metric", "report", "active_subscriber_count", "--as-of", "2026-01-03", "--role", "admin"]) == 0
    report_line = capsys.readouterr().out
    assert eval_line == report_line
    assert json.loads(eval_line)["value"] == brute


# -- 9 ----------------------------------------------------------------------------------
@pytest.mark.criterion(9, "row-level security partition")
def test_rls_partition(tmp_path):
    store, _, as_of = synth_store(tmp_path, {
        "seed": 9, "subscribers": 120, "faults": [{"kind": "silent_mapping_failure", "count": 6}],
    })
    provider = pipeline.StoreProvider(store)
    gov = store.governance()
    roles = [Principal(f"regional_ops_{r}") for r in REGIONS]
    for source in ("activations", "invoice_line", "recon_outcomes", "inventory_aging"):
        rows = provider.rows(source, as_of)
        tagged = {i for i, r in enumerate(rows) if r.get("location_id") is not None}
        assert tagged
        index = {id(r): i for i, r in enumerate(rows)}
        seen = []
        for p in roles:
            visible, _ = gov.read(rows, p, {source}, as_of=as_of, action="read_report", object_name=source)
            seen.append({index[id(r)] for r in visible})
        for i, a in enumerate(seen):
            for b in seen[i + 1:]:
                assert not a & b
        assert set().union(*seen) == tagged
        assert gov.read(rows, Principal("contractor"), {source}, as_of=as_of, action="read_report", object_name=source)[0] == []

    ev = pipeline.evaluator(store)
    audit = store.governance().audit
    for name in ("active_subscriber_count", "billing_reconciliation_rate"):
        before = len(audit.events())
        admin = ev.evaluate(name, as_of, ADMIN)
        parts = [ev.evaluate(name, as_of, p) for p in roles]
        nobody = ev.evaluate(name, as_of, Principal("contractor"))
        events = audit.events()[before:]
        assert len(events) == 6 and {e["action"] for e in events} == {"evaluate_metric"}
        assert events[-1]["row_count"] == 0 and nobody["value"] in (0, None)
        assert sum(e["row_count"] for e in events[1:5]) == events[0]["row_count"]
        if name == "active_subscriber_count":
            assert sum(p["value"] for p in parts) == admin["value"]
    assert audit.verify().ok


# -- 10 ---------------------------------------------------------------------------------
def _flip_each(log):
    """Flip the case bit of one letter in each event's object value; yield (sequence, report)."""
    original = log.path.read_bytes()
    lines = original.split(b"\n")
    for i, line in enumerate(lines):
        if not line:
            continue
        ev = json.loads(line)
        marker = b'"object":"'
        pos = line.index(marker) + len(marker)
        assert chr(line[pos]).isalpha()
        mutated = bytearray(line)
        mutated[pos] ^= 0x20
        log.path.write_bytes(b"\n".join(lines[:i] + [bytes(mutated)] + lines[i + 1:]))
        yield ev["sequence"], log.verify()
        log.path.write_bytes(original)


@pytest.mark.criterion(10, "audit tamper evidence")
def test_audit_tamper_evidence(lifecycle_store):
    store = lifecycle_store
    audit = store.governance().audit
    assert audit.verify().ok and len(audit.events()) > 5
    for sequence, report in _flip_each(audit):
        assert (report.ok, report.broken_at) == (False, sequence)
    assert audit.verify().ok

    tomb = audit.compact(D("2026-02-20"), retention_days=3)
    assert tomb is not None and tomb["removed_count"] >= 1
    assert audit.verify().ok
    checked = 0
    for sequence, report in _flip_each(audit):
        assert (report.ok, report.broken_at) == (False, sequence)
        checked += 1
    assert checked == len(audit.events()) and audit.verify().ok


@pytest.fixture
def lifecycle_store(store):
    _lifecycle_store(store)
    for day in ("2026-02-01", "2026-02-10", "2026-02-15", "2026-02-18"):
        pipeline.run(store, D(day))
        pipeline.governed_exceptions(store, D(day), ADMIN)
        pipeline.governed_recon_report(store, D(day), Principal("regional_ops_NW"))
    return store


# -- 11 ---------------------------------------------------------------------------------
@pytest.mark.criterion(11, "fan-out guard")
def test_fan_out_guard(store):
    receipts = [
        {"receipt_id": f"R{i}", "po_id": "PO7", "material_code": "000123", "received_date": "2026-01-05",
         "quantity": 10, "location_id": "NW"}
        for i in range(3)
    ]
    issues = [
        {"issue_id": f"X{i}", "po_id": "PO7", "material_code": "123", "job_id": f"J{i}", "issued_date": "2026-01-08",
         "quantity": q, "location_id": "NW"}
        for i, q in enumerate((4, 6))
    ]
    ingest(store, "erp", "receiving", "2026-01-05", receipts)
    ingest(store, "erp", "issuance", "2026-01-08", issues)
    pipeline.run(store, D("2026-01-10"))
    staged = store.staged.load_pass(through=D("2026-01-10"))
    rec = [r for r in staged if r.entity_kind == "receiving"]
    iss = [r for r in staged if r.entity_kind == "issuance"]
    assert (len(rec), len(iss)) == (3, 2)

    naive = [(r, s) for r in rec for s in iss if r.fields["po_id"] == s.fields["po_id"]]
    assert len(naive) == 6 and sum(r.fields["quantity"] for r, _ in naive) == 60

    grain = ("po_id", "material_code")
    with pytest.raises(GrainViolation):
        grain_join([r.fields for r in rec], [s.fields for s in iss], grain)
    left, _ = dedup_and_aggregate(rec, GrainSpec("receiving", grain, {"quantity": ("sum", "quantity")}))
    right, _ = dedup_and_aggregate(iss, GrainSpec("issuance", grain, {"quantity": ("sum", "quantity")}))
    (row,) = grain_join(left, right, grain)
    oracle = (sum(r["quantity"] for r in receipts), sum(s["quantity"] for s in issues))
    assert (row["quantity"], row["right_quantity"]) == oracle == (30, 10)


# -- 12 ---------------------------------------------------------------------------------
@pytest.mark.criterion(12, "performance at 10^5 rows")
def test_performance(tmp_path):
    cfg = ScenarioConfig.from_dict({"seed": 12, "subscribers": 24500, "faults": [
        {"kind": "silent_mapping_failure", "count": 100},
    ]})
    manifest = generate(cfg, tmp_path / "scenario")
    rows = sum(manifest["counts"].values())
    assert rows >= 100_000
    store = pipeline.Store(tmp_path / "store")
    store.init()
    as_of = D(manifest["settle_as_of"])
    t0 = time.perf_counter()
    load_scenario(store, tmp_path / "scenario")
    pipeline.run(store, as_of, lookback=(as_of - cfg.start).days)
    elapsed = time.perf_counter() - t0
    print(f"\n{rows} rows ingested and run in {elapsed:.1f}s")
    assert elapsed < 60
    assert len([e for e in store.exceptions().state(as_of).values() if e.category == "unmatched"]) == 100
