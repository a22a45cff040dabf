import json
from datetime import date
from pathlib import Path

import pytest

from gera import pipeline
from gera.synth import ScenarioConfig, generate, load_scenario

_RESULTS = pytest.StashKey[dict]()


def write_rows(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def ingest(store: pipeline.Store, source: str, entity: str, as_of: str, rows: list[dict], name: str | None = None):
    path = store.root.parent / "extracts" / source / as_of / f"{name or entity}.ndjson"
    return store.raw.load_batch(write_rows(path, rows), source, entity, as_of, "ndjson")


def install_crosswalk(store: pipeline.Store, entries: dict[str, str]) -> None:
    doc = {
        "name": "circuit_to_account",
        "source_pattern": r"\d{10}",
        "target_pattern": r"[A-Z]{2}\d{10}",
        "entries": entries,
    }
    (store.config_dir / "crosswalks" / "circuit_to_account.json").write_text(json.dumps(doc, indent=1))


def synth_store(root: Path, config: dict, through: date | None = None, lookback: int | None = None):
    """Generate a scenario, load it into a fresh store and run once at its settle date."""
    cfg = ScenarioConfig.from_dict(config)
    manifest = generate(cfg, root / "scenario")
    store = pipeline.Store(root / "store")
    store.init()
    load_scenario(store, root / "scenario")
    as_of = through or date.fromisoformat(manifest["settle_as_of"])
    span = (as_of - cfg.start).days + 1
    pipeline.run(store, as_of, lookback if lookback is not None else span)
    return store, manifest, as_of


@pytest.fixture
def store(tmp_path):
    s = pipeline.Store(tmp_path / "store")
    s.init()
    return s


# -- acceptance reporting ------------------------------------------------------------
def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.stash[_RESULTS] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    results = item.config.stash[_RESULTS]
    prior = results.get(number, (title, True))
    ok = prior[1] and not report.failed
    if report.when == "setup" and report.passed:
        return
    results[number] = (title, ok)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok = results[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {title}")
