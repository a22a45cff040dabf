from datetime import date
from pathlib import Path

import pytest
from hypothesis import given, settings, HealthCheck
from hypothesis import strategies as st

from gera._common import IntegrityError, ValidationError
from gera.ingest import BatchRejected, RawStore

THREE_ROWS = (
    "order_id,subscriber_id,service_date,plan,location_id\n"
    "O1,S1,2026-01-02,1G,NW\n"
    'O2,S2,2026-01-02,"1G, promo",NW\n'
    "O3,S3,01/03/2026,500M,SW\n"
)


def write(tmp_path: Path, name: str, text: str) -> Path:
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture
def store(tmp_path):
    return RawStore(tmp_path / "store")


class TestLoadBatch:
    def test_three_row_csv(self, store, tmp_path):
        f = write(tmp_path, "orders.csv", THREE_ROWS)
        receipt = store.load_batch(f, "crm", "service_order", "2026-01-10")
        assert receipt.records_written == 3
        assert receipt.duplicate_of is None
        assert receipt.partition_key == ("crm", date(2026, 1, 10))
        records = list(store.replay())
        assert len(records) == 3
        assert all(r.partition_key == ("crm", date(2026, 1, 10)) for r in records)
        assert records[1].get("plan") == "1G, promo"
        # source field names and order preserved, values untouched strings
        assert [k for k, _ in records[0].payload] == [
            "order_id", "subscriber_id", "service_date", "plan", "location_id"
        ]
        assert records[2].event_date == "01/03/2026"

    def test_reload_is_duplicate(self, store, tmp_path):
        f = write(tmp_path, "orders.csv", THREE_ROWS)
        first = store.load_batch(f, "crm", "service_order", "2026-01-10")
        manifest_before = store.manifest_path.read_bytes()
        again = store.load_batch(f, "crm", "service_order", "2026-01-10")
        assert again.records_written == 0
        assert again.duplicate_of == first.batch_hash
        assert store.manifest_path.read_bytes() == manifest_before
        assert len(list(store.replay())) == 3

    def test_header_only_file(self, store, tmp_path):
        f = write(tmp_path, "empty.csv", "order_id,subscriber_id,service_date\n")
        receipt = store.load_batch(f, "crm", "service_order", "2026-01-10")
        assert receipt.records_written == 0
        assert receipt.duplicate_of is None

    def test_ndjson(self, store, tmp_path):
        f = write(
            tmp_path,
            "pay.ndjson",
            '{"payment_ref": "P1", "invoice_id": "I1", "amount": 12.5, "settled_date": "2026-01-05"}\n',
        )
        store.load_batch(f, "payments", "payment_settlement", "2026-01-05")
        (rec,) = store.replay()
        assert rec.get("amount") == "12.5"

    def test_unknown_entity_rejected(self, store, tmp_path):
        f = write(tmp_path, "x.csv", THREE_ROWS)
        with pytest.raises(ValidationError, match="unknown entity_kind"):
            store.load_batch(f, "crm", "widget", "2026-01-10")

    def test_ragged_csv_rejected_with_line(self, store, tmp_path):
        f = write(tmp_path, "bad.csv", THREE_ROWS + "O4,S4\n")
        with pytest.raises(BatchRejected) as exc:
            store.load_batch(f, "crm", "service_order", "2026-01-10")
        assert any("line 5" in d for d in exc.value.diagnostics)
        assert store.batches() == []
        assert list(store.replay()) == []

    def test_bad_ndjson_line(self, store, tmp_path):
        f = write(tmp_path, "bad.ndjson", '{"a": "1"}\n{not json}\n')
        with pytest.raises(BatchRejected) as exc:
            store.load_batch(f, "x", "payment_settlement", "2026-01-10")
        assert exc.value.diagnostics[0].startswith("line 2")

    def test_unparseable_date_rejects_batch(self, store, tmp_path):
        f = write(tmp_path, "o.csv", "order_id,service_date\nO1,yesterday\n")
        with pytest.raises(BatchRejected, match="service_date"):
            store.load_batch(f, "crm", "service_order", "2026-01-10")
        assert store.batches() == []

    def test_invalid_as_of(self, store, tmp_path):
        f = write(tmp_path, "o.csv", THREE_ROWS)
        with pytest.raises(ValidationError):
            store.load_batch(f, "crm", "service_order", "2026-13-40")


class TestReplay:
    def test_day_order(self, store, tmp_path):
        day2 = write(tmp_path, "d2.csv", "order_id,service_date\nB1,2026-01-02\n")
        day1 = write(tmp_path, "d1.csv", "order_id,service_date\nA1,2026-01-01\nA2,2026-01-01\n")
        store.load_batch(day2, "crm", "service_order", "2026-01-02")
        store.load_batch(day1, "crm", "service_order", "2026-01-01")
        ids = [r.get("order_id") for r in store.replay()]
        assert ids == ["A1", "A2", "B1"]

    def test_missing_partition_is_empty(self, store, tmp_path):
        store.load_batch(write(tmp_path, "o.csv", THREE_ROWS), "crm", "service_order", "2026-01-10")
        assert list(store.replay("2026-02-01", "2026-02-28")) == []
        assert list(store.replay(sources=["billing"])) == []

    def test_truncated_partition_raises(self, store, tmp_path):
        store.load_batch(write(tmp_path, "o.csv", THREE_ROWS), "crm", "service_order", "2026-01-10")
        (batch,) = store.batches()
        path = store.raw / batch.file
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(IntegrityError, match="crm/2026-01-10"):
            list(store.replay())


class TestVerifyStore:
    def test_empty_store(self, store):
        report = store.verify_store()
        assert report.ok and report.partitions_checked == 0

    def test_untouched(self, store, tmp_path):
        store.load_batch(write(tmp_path, "o.csv", THREE_ROWS), "crm", "service_order", "2026-01-10")
        assert store.verify_store().ok

    def test_edited_record_flags_one_partition(self, store, tmp_path):
        store.load_batch(write(tmp_path, "a.csv", THREE_ROWS), "crm", "service_order", "2026-01-10")
        store.load_batch(
            write(tmp_path, "b.csv", "order_id,service_date\nZ9,2026-01-11\n"),
            "crm", "service_order", "2026-01-11",
        )
        batch = store.batches()[0]
        path = store.raw / batch.file
        path.write_text(path.read_text().replace('"O2"', '"O7"'))
        report = store.verify_store()
        assert report.mismatches == ["crm/2026-01-10"]


rows_strategy = st.lists(
    st.lists(st.text(alphabet="abcXYZ019 ,\"", max_size=6), min_size=2, max_size=2),
    max_size=8,
)


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(batches=st.lists(rows_strategy, min_size=1, max_size=4))
def test_idempotent_replay_fidelity(tmp_path_factory, batches):
    import csv
    import io

    root = tmp_path_factory.mktemp("prop")
    store = RawStore(root / "store")
    expected = []
    seen = set()
    for i, rows in enumerate(batches):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["order_id", "plan"])
        w.writerows(rows)
        data = buf.getvalue()
        f = root / f"b{i}.csv"
        f.write_text(data, encoding="utf-8")
        store.load_batch(f, "crm", "service_order", "2026-01-01")
        snapshot = store.manifest_path.read_bytes()
        store.load_batch(f, "crm", "service_order", "2026-01-01")
        assert store.manifest_path.read_bytes() == snapshot
        if data not in seen:
            seen.add(data)
            expected.extend(tuple(r) for r in rows)
    got = [(r.get("order_id"), r.get("plan")) for r in store.replay()]
    assert got == [tuple(r) for r in expected]
    lineage = [r.lineage_id for r in store.replay()]
    assert len(lineage) == len(set(lineage))
