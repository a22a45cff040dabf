from datetime import date, timedelta
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gera._common import ConfigError, IntegrityError, ValidationError
from gera.reconcile import (
    ExceptionStore,
    GrainSpec,
    GrainViolation,
    MatchSpec,
    age_and_escalate,
    dedup_and_aggregate,
    exception_id,
    grain_join,
    reconciliation_report,
    run_match,
)
from gera.reconcile.report import render_report_text
from gera.reconcile.specs import BUILTIN_MATCH_SPECS
from gera.staging.records import StagedRecord

D = date.fromisoformat
ACT_INV = MatchSpec("activation_invoice", "provisioning_event", "invoice_line", ("order_id",))
ORPHANS = next(s for s in BUILTIN_MATCH_SPECS if s.name == "payment_orphans")


def rec(kind, lineage, event_date, ingested=None, seq=0, row=0, **fields):
    event_date = D(event_date)
    return StagedRecord(
        lineage_id=lineage,
        entity_kind=kind,
        source_id="t",
        ingested_as_of=D(ingested) if ingested else event_date,
        event_date=event_date,
        fields={"location_id": "NW", **fields},
        batch_seq=seq,
        row=row,
    )


def activation(lineage, order, day, ingested=None):
    return rec("provisioning_event", lineage, day, ingested, order_id=order)


def invoice(lineage, order, day, ingested=None, **kw):
    kw.setdefault("invoice_id", "I-" + lineage)
    return rec("invoice_line", lineage, day, ingested, order_id=order, **kw)


def sync_through(store, spec, lefts, rights, start, end):
    d = start
    while d <= end:
        store.sync(run_match(spec, lefts, rights, d).events, d)
        d += timedelta(days=1)


class TestRunMatch:
    def test_inside_window_matches(self):
        res = run_match(ACT_INV, [activation("a1", "O1", "2026-01-02")], [invoice("i1", "O1", "2026-01-20")], D("2026-01-25"))
        assert [p.right.lineage_id for p in res.matches] == ["i1"]
        assert res.outcomes == {"a1": "matched"}

    def test_expired_window_is_unmatched(self):
        left = [activation("a2", "O2", "2026-01-02")]
        res = run_match(ACT_INV, left, [], D("2026-02-05"))
        assert [r.lineage_id for r in res.left_unmatched] == ["a2"]
        (ev,) = res.events
        assert ev["category"] == "unmatched"
        # brute force date arithmetic: 2026-01-02 plus 30 days
        expiry = date(2026, 1, 2).toordinal() + 30
        assert ev["opened_as_of"] == date.fromordinal(expiry).isoformat() == "2026-02-01"

    def test_inside_window_is_pending_not_exception(self):
        left = [activation("a2", "O2", "2026-01-02")]
        for d in ("2026-01-10", "2026-02-01"):
            res = run_match(ACT_INV, left, [], D(d))
            assert res.outcomes == {"a2": "pending"} and res.events == []

    def test_right_before_left_does_not_match(self):
        res = run_match(ACT_INV, [activation("a1", "O1", "2026-01-10")], [invoice("i1", "O1", "2026-01-05")], D("2026-03-01"))
        assert res.outcomes == {"a1": "exception"}

    def test_orphan_payment(self):
        pay = rec("payment_settlement", "p9", "2026-02-04", "2026-02-05", payment_ref="P9", invoice_id="NOPE")
        res = run_match(ORPHANS, [invoice("i1", "O1", "2026-01-20", invoice_id="I1")], [pay], D("2026-02-05"))
        assert [r.lineage_id for r in res.right_orphans] == ["p9"]
        (ev,) = res.events
        assert ev["category"] == "orphaned" and ev["opened_as_of"] == "2026-02-05"

    def test_null_keys_never_pair(self):
        res = run_match(ACT_INV, [activation("a1", None, "2026-01-02")], [invoice("i1", None, "2026-01-03")], D("2026-01-04"))
        assert res.matches == []

    def test_inconsistent_amount(self):
        spec = next(s for s in BUILTIN_MATCH_SPECS if s.name == "invoice_payment")
        inv = rec("invoice_line", "i1", "2026-01-01", invoice_id="I1", amount=Decimal("50.00"))
        pay = rec("payment_settlement", "p1", "2026-01-05", payment_ref="P1", invoice_id="I1", amount=Decimal("45.00"))
        res = run_match(spec, [inv], [pay], D("2026-01-06"))
        assert len(res.inconsistent) == 1
        assert res.events[0]["category"] == "inconsistent" and res.events[0]["fields"] == ["amount"]

    def test_unknown_field_is_config_error(self):
        with pytest.raises(ConfigError):
            MatchSpec("bad", "service_order", "provisioning_event", ("service_code",))
        with pytest.raises(ConfigError):
            MatchSpec("bad", "service_order", "provisioning_event", ("order_id",), window_days=-1)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 3), st.integers(0, 40), st.integers(0, 10)), max_size=8),
        st.lists(st.tuples(st.integers(0, 3), st.integers(0, 70), st.integers(0, 10)), max_size=8),
        st.integers(0, 90),
    )
    def test_partition_property(self, lspec, rspec, as_of_offset):
        base = date(2026, 1, 1)
        lefts = [
            activation(f"a{i}", f"O{k}", (base + timedelta(e)).isoformat(), (base + timedelta(e + lag)).isoformat())
            for i, (k, e, lag) in enumerate(lspec)
        ]
        rights = [
            invoice(f"i{i}", f"O{k}", (base + timedelta(e)).isoformat(), (base + timedelta(e + lag)).isoformat())
            for i, (k, e, lag) in enumerate(rspec)
        ]
        as_of = base + timedelta(as_of_offset)
        res = run_match(ACT_INV, lefts, rights, as_of)
        known = {l.lineage_id for l in lefts if l.ingested_as_of <= as_of}
        assert set(res.outcomes) == known
        matched = {p.left.lineage_id for p in res.matches}
        pending = {r.lineage_id for r in res.pending}
        exc = {l for l, o in res.outcomes.items() if o == "exception"}
        assert matched | pending | exc == known
        assert not (matched & pending) and not (matched & exc) and not (pending & exc)
        # every on-time match satisfies the window rule
        for p in res.matches:
            assert p.left.event_date <= p.right.event_date <= p.left.event_date + timedelta(30)


class TestLifecycle:
    def test_o2_timeline(self, tmp_path):
        store = ExceptionStore(tmp_path)
        left = [activation("a2", "O2", "2026-01-02")]
        sync_through(store, ACT_INV, left, [], D("2026-01-02"), D("2026-02-15"))
        xid = exception_id("activation_invoice", "a2")
        at_14 = store.state(D("2026-02-14"))[xid]
        assert (at_14.age_days, at_14.escalated, at_14.status) == (13, False, "open")
        at_15 = store.state(D("2026-02-15"))[xid]
        assert (at_15.age_days, at_15.escalated) == (14, True)
        assert at_15.opened_as_of == D("2026-02-01")

    def test_rerun_opens_nothing_new(self, tmp_path):
        store = ExceptionStore(tmp_path)
        left = [activation("a2", "O2", "2026-01-02")]
        assert len(store.sync(run_match(ACT_INV, left, [], D("2026-02-05")).events, D("2026-02-05"))) == 1
        before = store.path.read_bytes()
        assert store.sync(run_match(ACT_INV, left, [], D("2026-02-06")).events, D("2026-02-06")) == []
        assert store.sync(run_match(ACT_INV, left, [], D("2026-02-05")).events, D("2026-02-05")) == []
        assert store.path.read_bytes() == before

    def test_late_invoice_resolves_and_keeps_history(self, tmp_path):
        store = ExceptionStore(tmp_path)
        left = [activation("a2", "O2", "2026-01-02")]
        right = [invoice("i9", "O2", "2026-02-09", "2026-02-20")]
        sync_through(store, ACT_INV, left, right, D("2026-02-01"), D("2026-02-25"))
        xid = exception_id("activation_invoice", "a2")
        ex = store.state(D("2026-02-25"))[xid]
        assert ex.status == "matched_late" and ex.closed_as_of == D("2026-02-20")
        assert ex.was_escalated and not ex.escalated
        assert ex.counterpart_lineage_id == "i9"
        with pytest.raises(ValidationError, match="matched_late"):
            store.resolve_manual(xid, "dup", "ana", D("2026-02-25"))

    def test_late_invoice_on_0210(self, tmp_path):
        store = ExceptionStore(tmp_path)
        left = [activation("a2", "O2", "2026-01-02")]
        right = [invoice("i9", "O2", "2026-02-10")]
        sync_through(store, ACT_INV, left, right, D("2026-02-01"), D("2026-02-12"))
        ex = store.state(D("2026-02-12"))[exception_id("activation_invoice", "a2")]
        assert ex.status == "matched_late" and not ex.was_escalated

    def test_two_late_invoices_tie_break(self):
        left = [activation("a2", "O2", "2026-01-02")]
        right = [invoice("i-b", "O2", "2026-02-10"), invoice("i-a", "O2", "2026-02-10"), invoice("i-0", "O2", "2026-02-11", "2026-02-10")]
        res = run_match(ACT_INV, left, right, D("2026-02-12"))
        # brute force: order by (event_date, lineage_id) and take the first
        first = min(right, key=lambda r: (r.event_date, r.lineage_id))
        assert [p.right.lineage_id for p in res.late] == [first.lineage_id] == ["i-a"]
        assert sorted(r.lineage_id for r in res.duplicates) == ["i-0", "i-b"]
        assert {e["category"] for e in res.events if e["event"] == "opened"} == {"unmatched", "duplicate"}

    def test_manual_resolution_and_assign(self, tmp_path):
        store = ExceptionStore(tmp_path)
        left = [activation("a2", "O2", "2026-01-02")]
        store.sync(run_match(ACT_INV, left, [], D("2026-02-03")).events, D("2026-02-03"))
        xid = exception_id("activation_invoice", "a2")
        store.assign(xid, "ops-nw", D("2026-02-04"))
        store.resolve_manual(xid, "credited offline", None, D("2026-02-05"))
        ex = store.state(D("2026-02-06"))[xid]
        assert (ex.status, ex.owner, ex.note) == ("resolved_manual", "ops-nw", "credited offline")
        # a later invoice must not reopen or re-close it
        right = [invoice("i9", "O2", "2026-02-07")]
        assert store.sync(run_match(ACT_INV, left, right, D("2026-02-08")).events, D("2026-02-08")) == []
        with pytest.raises(ValidationError):
            store.resolve_manual("EX-nope", "x", None, D("2026-02-08"))

    def test_orphan_age_zero_bucket(self, tmp_path):
        store = ExceptionStore(tmp_path)
        pay = rec("payment_settlement", "p9", "2026-02-04", "2026-02-05", payment_ref="P9", invoice_id="NOPE")
        store.sync(run_match(ORPHANS, [], [pay], D("2026-02-05")).events, D("2026-02-05"))
        rows, hist = age_and_escalate(store.state(D("2026-02-05")).values(), D("2026-02-05"))
        assert rows[0].age_days == 0 and rows[0].opened_as_of == D("2026-02-05")
        assert hist == {"0-7": 1, "8-14": 0, "15-30": 0, ">30": 0}

    def test_clock_regression(self, tmp_path):
        store = ExceptionStore(tmp_path)
        store.sync(run_match(ACT_INV, [activation("a2", "O2", "2026-01-02")], [], D("2026-02-05")).events, D("2026-02-05"))
        exs = list(store.state(D("2026-02-05")).values())
        with pytest.raises(IntegrityError, match="clock regression"):
            age_and_escalate(exs, D("2026-01-20"))

    def test_escalation_is_monotone_while_open(self, tmp_path):
        store = ExceptionStore(tmp_path)
        sync_through(store, ACT_INV, [activation("a2", "O2", "2026-01-02")], [], D("2026-02-01"), D("2026-03-20"))
        xid = exception_id("activation_invoice", "a2")
        flags = [store.state(D("2026-02-02") + timedelta(i))[xid].escalated for i in range(45)]
        assert flags == sorted(flags)

    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 2), st.integers(0, 20), st.integers(0, 12)), max_size=6),
        st.lists(st.tuples(st.integers(0, 2), st.integers(0, 60), st.integers(0, 25)), max_size=6),
    )
    def test_day_by_day_equals_batch(self, tmp_path_factory, lspec, rspec):
        base = date(2026, 1, 1)
        lefts = [
            activation(f"a{i}", f"O{k}", (base + timedelta(e)).isoformat(), (base + timedelta(e + lag)).isoformat())
            for i, (k, e, lag) in enumerate(lspec)
        ]
        rights = [
            invoice(f"i{i}", f"O{k}", (base + timedelta(e)).isoformat(), (base + timedelta(e + lag)).isoformat())
            for i, (k, e, lag) in enumerate(rspec)
        ]
        end = base + timedelta(90)
        daily = ExceptionStore(tmp_path_factory.mktemp("daily"))
        sync_through(daily, ACT_INV, lefts, rights, base, end)
        batch = ExceptionStore(tmp_path_factory.mktemp("batch"))
        batch.sync(run_match(ACT_INV, lefts, rights, end).events, end)
        assert daily.digest_lines() == batch.digest_lines()


class TestGrain:
    GRAIN = GrainSpec("receiving", ("po_id", "material_code"), {"quantity": ("sum", "quantity"), "rows": ("count", None)})

    def receiving(self):
        return [
            rec("receiving", f"r{i}", "2026-01-05", seq=1, row=i, receipt_id=f"RC{i}", po_id="PO7", material_code="M1", quantity=10)
            for i in range(3)
        ]

    def test_sum_to_grain(self):
        rows, dups = dedup_and_aggregate(self.receiving(), self.GRAIN)
        assert len(rows) == 1 and rows[0]["quantity"] == 30 and rows[0]["rows"] == 3 and dups == []

    def test_duplicate_row_loaded_twice(self):
        recs = self.receiving()
        again = rec("receiving", "r0-again", "2026-01-05", "2026-01-06", receipt_id="RC0", po_id="PO7", material_code="M1", quantity=10)
        rows, dups = dedup_and_aggregate(recs + [again], self.GRAIN)
        assert rows[0]["quantity"] == 30
        assert [(d["lineage_id"], d["category"], d["match_spec"]) for d in dups] == [("r0-again", "duplicate", "dedup:receiving")]
        assert dups[0]["opened_as_of"] == "2026-01-06"

    def test_fan_out_avoided(self):
        receiving = self.receiving()
        issuance = [
            rec("issuance", f"s{i}", "2026-01-08", issue_id=f"IS{i}", po_id="PO7", material_code="M1", quantity=q)
            for i, q in enumerate((4, 6))
        ]
        naive = [(r, s) for r in receiving for s in issuance if r.fields["po_id"] == s.fields["po_id"]]
        assert len(naive) == 6
        naive_received = sum(r.fields["quantity"] for r, _ in naive)
        assert naive_received == 60
        left, _ = dedup_and_aggregate(receiving, self.GRAIN)
        right, _ = dedup_and_aggregate(issuance, GrainSpec("issuance", ("po_id", "material_code"), {"quantity": ("sum", "quantity")}))
        joined = grain_join(left, right, ("po_id", "material_code"))
        oracle_received = sum(r.fields["quantity"] for r in receiving)
        oracle_issued = sum(s.fields["quantity"] for s in issuance)
        assert len(joined) == 1
        assert (joined[0]["quantity"], joined[0]["right_quantity"]) == (oracle_received, oracle_issued) == (30, 10)

    def test_mis_specified_grain_aborts(self):
        rows = [{"po_id": "PO7", "q": 1}, {"po_id": "PO7", "q": 2}]
        with pytest.raises(GrainViolation) as err:
            grain_join(rows, [], ("po_id",))
        assert err.value.keys == [("PO7",)]


class TestReport:
    def test_rate_nine_of_ten(self, tmp_path):
        lefts = [activation(f"a{i}", f"O{i}", "2026-01-02") for i in range(10)]
        rights = [invoice(f"i{i}", f"O{i}", "2026-01-10") for i in range(9)]
        as_of = D("2026-02-05")
        res = run_match(ACT_INV, lefts, rights, as_of)
        store = ExceptionStore(tmp_path)
        store.sync(res.events, as_of)
        report = reconciliation_report({ACT_INV.name: res}, store.state(as_of).values(), as_of)
        row = report["specs"][0]
        assert (row["matched"], row["open"], row["reconciliation_rate"]) == (9, 1, 0.9)
        assert "0.9000" in render_report_text(report)

    def test_empty_rate_is_null(self):
        as_of = D("2026-02-05")
        res = run_match(ACT_INV, [], [], as_of)
        report = reconciliation_report({ACT_INV.name: res}, [], as_of)
        assert report["specs"][0]["reconciliation_rate"] is None
        assert report["specs"][0]["resolution_rate"] is None
        assert "null" in render_report_text(report)
