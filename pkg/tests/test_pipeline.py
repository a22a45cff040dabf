import json
from datetime import date, timedelta

import pytest
from conftest import ingest, install_crosswalk

from gera import pipeline
from gera._common import MissingDataError, ValidationError
from gera.governance import Principal

D = date.fromisoformat
ADMIN = Principal("admin")
CROSSWALK = {"4155550101": "NW4155550101", "4155550102": "NW4155550102", "4155550103": "SW4155550103"}


def activation(order, circuit, region, day="2026-01-02", status="active"):
    return {
        "order_id": order, "subscriber_id": "S" + order, "circuit_id": circuit, "activation_date": day,
        "status": status, "trial": False, "location_id": region,
    }


def invoice(inv, account, region, day):
    return {
        "invoice_id": inv, "account_id": account, "subscriber_id": "S", "order_id": "O", "invoice_date": day,
        "amount": "49.99", "location_id": region,
    }


def payment(ref, inv, region, day):
    return {"payment_ref": ref, "invoice_id": inv, "settled_date": day, "amount": "49.99", "location_id": region}


def files(root):
    skip = {"run.lock"}
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and not p.name.endswith(".lock") and p.name not in skip
    }


@pytest.fixture
def lifecycle(store):
    install_crosswalk(store, CROSSWALK)
    ingest(store, "prov", "provisioning_event", "2026-01-02", [
        activation("o1", "4155550101", "nw"),
        activation("o2", "4155550103", "sw"),
    ])
    ingest(store, "billing", "invoice_line", "2026-01-10", [invoice("I1", "NW4155550101", "NW", "2026-01-10")])
    ingest(store, "pay", "payment_settlement", "2026-01-20", [payment("P1", "I1", "NW", "2026-01-20")])
    return store


class TestStore:
    def test_init_copies_defaults_once(self, tmp_path):
        s = pipeline.Store(tmp_path / "s")
        created = s.init()
        assert "config/rules.json" in created and "config/metrics/active_subscriber_count.metric" in created
        (s.config_dir / "anomaly.json").write_text('{"window_size": 20, "min_observations": 5}')
        assert s.init() == []
        assert json.loads((s.config_dir / "anomaly.json").read_text())["window_size"] == 20

    def test_run_needs_init(self, tmp_path):
        with pytest.raises(ValidationError, match="gera init"):
            pipeline.run(pipeline.Store(tmp_path / "nope"), D("2026-01-01"))

    def test_negative_lookback_rejected(self, store):
        with pytest.raises(ValidationError):
            pipeline.run(store, D("2026-01-01"), lookback=-1)

    def test_reads_before_run_are_missing_data(self, store):
        with pytest.raises(MissingDataError):
            pipeline.governed_recon_report(store, D("2026-01-01"), ADMIN)
        with pytest.raises(MissingDataError):
            pipeline.StoreProvider(store).rows("activations", D("2026-01-01"))

    def test_run_activates_policies_with_one_audit_event(self, store):
        pipeline.run(store, D("2026-01-01"))
        pipeline.run(store, D("2026-01-02"))
        events = store.governance().audit.events()
        assert [e["action"] for e in events] == ["admin_policy_change"]
        assert events[0]["principal"]["role"] == "system"


class TestRun:
    def test_lifecycle_ages_and_escalates(self, lifecycle):
        for day in ("2026-02-01", "2026-02-14", "2026-02-15"):
            pipeline.run(lifecycle, D(day))
        state = {e.match_spec: e for e in lifecycle.exceptions().state(D("2026-02-15")).values()}
        ex = state["activation_billing"]
        assert (ex.opened_as_of, ex.age_days, ex.escalated, ex.territory) == (D("2026-02-01"), 14, True, "SW")
        assert ex.natural_key == {"order_id": "O2"}
        assert "invoice_payment" not in state  # paid inside its window

    def test_outcomes_written_per_run(self, lifecycle):
        pipeline.run(lifecycle, D("2026-02-15"))
        rows = [json.loads(l) for l in lifecycle.outcomes_path(D("2026-02-15")).read_text().splitlines()]
        billing = [r for r in rows if r["match_spec"] == "activation_billing"]
        assert [(r["outcome"], r["location_id"]) for r in billing] == [("matched", "NW")]

    def test_repeated_run_is_byte_identical(self, lifecycle):
        pipeline.run(lifecycle, D("2026-02-15"))
        before = files(lifecycle.root)
        pipeline.run(lifecycle, D("2026-02-15"))
        assert files(lifecycle.root) == before

    def test_day_by_day_equals_one_run(self, tmp_path):
        def build(name):
            s = pipeline.Store(tmp_path / name)
            s.init()
            install_crosswalk(s, CROSSWALK)
            ingest(s, "prov", "provisioning_event", "2026-01-02", [activation("o1", "4155550101", "nw")])
            # invoice arrives long after the window closed
            ingest(s, "billing", "invoice_line", "2026-02-20", [invoice("I1", "NW4155550101", "NW", "2026-01-25")])
            return s

        a, b = build("a"), build("b")
        day = D("2026-01-01")
        while day <= D("2026-02-25"):
            pipeline.run(a, day)
            day += timedelta(days=1)
        pipeline.run(b, D("2026-02-25"))
        ea = (a.root / "recon" / "exceptions.ndjson").read_bytes()
        assert ea == (b.root / "recon" / "exceptions.ndjson").read_bytes()
        (ex,) = [e for e in a.exceptions().state(D("2026-02-25")).values() if e.match_spec == "activation_billing"]
        assert (ex.status, ex.closed_as_of, ex.was_escalated) == ("matched_late", D("2026-02-20"), True)

    def test_config_change_restages(self, lifecycle):
        pipeline.run(lifecycle, D("2026-02-15"))
        entry = next(iter(lifecycle.staged.manifest()["batches"].values()))
        rules = json.loads((lifecycle.config_dir / "rules.json").read_text())
        rules["entities"]["service_order"]["fields"]["plan"] = {"rules": [{"op": "trim"}]}
        (lifecycle.config_dir / "rules.json").write_text(json.dumps(rules))
        pipeline.run(lifecycle, D("2026-02-15"))
        after = next(iter(lifecycle.staged.manifest()["batches"].values()))
        assert after["config_digest"] != entry["config_digest"]
        assert after["versions"]["rules"] != entry["versions"]["rules"]

    def test_quality_failure_is_quarantined_not_dropped(self, store):
        install_crosswalk(store, CROSSWALK)
        ingest(store, "prov", "provisioning_event", "2026-01-02", [
            activation("o1", "4155550101", "NW", status="zombie"),
            activation("o2", "9999999999", "NW"),
        ])
        summary = pipeline.run(store, D("2026-01-03"))
        assert summary["staged"]["quarantined"] == 2
        reasons = sorted(r.reason for r in store.staged.load_quarantine())
        assert reasons[0].startswith("accepted_values") and reasons[1] == "crosswalk_miss:circuit_id"


class TestGovernedReads:
    def test_recon_report_respects_territory(self, lifecycle):
        pipeline.run(lifecycle, D("2026-02-15"))
        nw = pipeline.governed_recon_report(lifecycle, D("2026-02-15"), Principal("regional_ops_NW"))
        sw = pipeline.governed_recon_report(lifecycle, D("2026-02-15"), Principal("regional_ops_SW"))
        row = lambda r: next(s for s in r["specs"] if s["match_spec"] == "activation_billing")
        assert (row(nw)["matched"], row(nw)["open"]) == (1, 0)
        assert (row(sw)["matched"], row(sw)["open"]) == (0, 1)
        assert {s["match_spec"] for s in nw["specs"]} >= {"order_provisioning", "issuance_installation"}

    def test_unknown_role_sees_nothing(self, lifecycle):
        pipeline.run(lifecycle, D("2026-02-15"))
        assert pipeline.governed_exceptions(lifecycle, D("2026-02-15"), Principal("intern")) == []

    def test_each_read_audits_once(self, lifecycle):
        pipeline.run(lifecycle, D("2026-02-15"))
        audit = lifecycle.governance().audit
        n = len(audit.events())
        pipeline.governed_exceptions(lifecycle, D("2026-02-15"), ADMIN)
        pipeline.governed_recon_report(lifecycle, D("2026-02-15"), ADMIN)
        pipeline.governed_aging(lifecycle, D("2026-02-15"), ADMIN)
        pipeline.governed_queue(lifecycle, D("2026-02-15"), ADMIN)
        actions = [e["action"] for e in audit.events()[n:]]
        assert actions == ["read_exceptions", "read_report", "read_report", "read_report"]

    def test_recon_outcomes_source_includes_exceptions(self, lifecycle):
        pipeline.run(lifecycle, D("2026-02-15"))
        rows = pipeline.StoreProvider(lifecycle).rows("recon_outcomes", D("2026-02-15"))
        billing = sorted((r["outcome"], r["location_id"]) for r in rows if r["match_spec"] == "activation_billing")
        assert billing == [("matched", "NW"), ("open", "SW")]
        ev = pipeline.evaluator(lifecycle)
        assert ev.evaluate("billing_reconciliation_rate", D("2026-02-15"), ADMIN)["value"] == 0.5


class TestInventory:
    def receipts(self, store):
        rows = [
            {"receipt_id": f"R{i}", "po_id": "PO1", "material_code": "00042", "received_date": f"2026-01-{i + 1:02d}",
             "quantity": 10, "location_id": "NW"}
            for i in range(3)
        ]
        for r in rows:
            ingest(store, "erp", "receiving", r["received_date"], [r])
        ingest(store, "erp", "issuance", "2026-01-05", [{
            "issue_id": "X1", "po_id": "PO1", "material_code": "42", "job_id": "J1", "issued_date": "2026-01-05",
            "quantity": 15, "location_id": "NW",
        }])

    def test_aging_and_snapshots(self, store):
        self.receipts(store)
        pipeline.run(store, D("2026-02-05"), lookback=3)
        report = pipeline.governed_aging(store, D("2026-02-05"), ADMIN)
        (row,) = report["rows"]
        # R0 consumed, R1 half consumed (age 34), R2 intact (age 33)
        assert (row["material_id"], row["31-60"], row["0-30"], row["on_hand"]) == ("42", 15, 0, 15)
        snaps = sorted(p.name for p in (store.root / "inventory" / "snapshots").iterdir())
        assert snaps == ["2026-02-02.ndjson", "2026-02-03.ndjson", "2026-02-04.ndjson", "2026-02-05.ndjson"]
        rows = pipeline.StoreProvider(store).rows("inventory_aging", D("2026-02-05"))
        assert [(r["bucket"], r["quantity"]) for r in rows] == [("31-60", 15)]

    def test_aging_is_territory_filtered(self, store):
        self.receipts(store)
        pipeline.run(store, D("2026-02-05"))
        assert pipeline.governed_aging(store, D("2026-02-05"), Principal("regional_ops_SW"))["rows"] == []
