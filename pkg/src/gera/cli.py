"""``gera`` command line.

Exit codes: 0 success, 1 validation error (bad input, config or missing
data), 2 integrity error (tampered store, broken audit chain, grain
violation).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path

from . import pipeline
from ._common import GeraError, IntegrityError, ValidationError, parse_date
from .governance import DEFAULT_RETENTION_DAYS, Principal
from .reconcile import render_report_text, render_table

log = logging.getLogger("gera")

EXIT_OK, EXIT_VALIDATION, EXIT_INTEGRITY = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _date(value: str) -> date:
    try:
        return parse_date(value)
    except (ValueError, ValidationError):
        raise argparse.ArgumentTypeError(f"not a YYYY-MM-DD date: {value!r}") from None


def _store(args) -> pipeline.Store:
    root = args.store or os.environ.get("GERA_STORE")
    if not root:
        raise ValidationError("no store: pass --store or set GERA_STORE")
    return pipeline.Store(root)


def _principal(args) -> Principal:
    role = getattr(args, "role", None) or os.environ.get("GERA_ROLE")
    if not role:
        raise ValidationError("governed reads need a principal: pass --role or set GERA_ROLE")
    territories = tuple(args.territory) if getattr(args, "territory", None) else None
    return Principal(role, territories)


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n")


# -- store and pipeline ---------------------------------------------------------
def cmd_init(args) -> int:
    created = _store(args).init()
    for c in created:
        print(f"created {c}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    store = _store(args)
    store.require_init()
    receipt = store.raw.load_batch(args.file, args.source, args.entity, args.as_of, args.format)
    if receipt.duplicate_of:
        print(f"duplicate of batch {receipt.duplicate_of}; nothing written")
    else:
        print(f"batch {receipt.batch_hash} {receipt.records_written} records -> {receipt.partition_key}")
    return EXIT_OK


def cmd_run(args) -> int:
    summary = pipeline.run(_store(args), args.as_of, args.lookback)
    if args.json:
        _emit_json(summary)
    else:
        s, e = summary["staged"], summary["exceptions"]
        print(f"run {summary['as_of']}: staged {s['pass']} pass / {s['quarantined']} quarantined "
              f"in {s['batches']} batches; exceptions open {e['open']} escalated {e['escalated']}; "
              f"flags {summary['inventory']['flags']}")
    return EXIT_OK


def cmd_raw_verify(args) -> int:
    report = _store(args).raw.verify_store()
    for pkey in report.mismatches:
        print(f"MISMATCH {pkey}")
    print(f"checked {report.partitions_checked} partitions: {'ok' if report.ok else 'FAILED'}")
    return EXIT_OK if report.ok else EXIT_INTEGRITY


# -- reconciliation -------------------------------------------------------------
EXCEPTION_COLUMNS = ("exception_id", "match_spec", "category", "status", "age_days", "escalated", "owner", "territory")


def cmd_recon_report(args) -> int:
    report = pipeline.governed_recon_report(_store(args), args.as_of, _principal(args))
    if args.json:
        _emit_json(report)
    else:
        sys.stdout.write(render_report_text(report))
    return EXIT_OK


def cmd_exceptions_list(args) -> int:
    rows = pipeline.governed_exceptions(_store(args), args.as_of, _principal(args), args.status, args.spec)
    if args.json:
        _emit_json(rows)
    else:
        print(render_table(rows, EXCEPTION_COLUMNS))
    return EXIT_OK


def cmd_exceptions_resolve(args) -> int:
    store = _store(args)
    store.require_init()
    event = store.exceptions().resolve_manual(args.exception_id, args.note, args.owner, args.as_of)
    print(f"{args.exception_id} resolved_manual as of {event['as_of']}")
    return EXIT_OK


def cmd_exceptions_assign(args) -> int:
    store = _store(args)
    store.require_init()
    store.exceptions().assign(args.exception_id, args.owner, args.as_of)
    print(f"{args.exception_id} assigned to {args.owner}")
    return EXIT_OK


# -- inventory --------------------------------------------------------------------
AGING_COLUMNS = ("material_id", "location_id", "0-30", "31-60", "61-90", ">90", "on_hand")
QUEUE_COLUMNS = ("snapshot_date", "material_id", "location_id", "observed", "normalized", "methods")


def cmd_inventory_aging(args) -> int:
    report = pipeline.governed_aging(_store(args), args.as_of, _principal(args))
    if args.json:
        _emit_json(report)
    else:
        print(f"inventory aging as of {report['as_of']}\n")
        print(render_table(report["rows"], AGING_COLUMNS))
        print("\ntotals: " + "  ".join(f"{k}:{v}" for k, v in report["totals"].items()))
        for q in report["quarantined"]:
            print(f"quarantined {q['material_id']}@{q['location_id']}: {q['reason']}")
    return EXIT_OK


def cmd_inventory_flags(args) -> int:
    queue = pipeline.governed_queue(_store(args), args.as_of, _principal(args))
    if args.json:
        _emit_json(queue)
    else:
        rows = [dict(q, methods=",".join(q["methods"])) for q in queue]
        print(render_table(rows, QUEUE_COLUMNS))
    return EXIT_OK


def cmd_inventory_disposition(args) -> int:
    store = _store(args)
    store.require_init()
    store.flags.set_disposition(args.flag_id, args.set, args.note, args.as_of)
    print(f"{args.flag_id} -> {args.set}")
    return EXIT_OK


# -- metrics ----------------------------------------------------------------------
def cmd_metric_eval(args) -> int:
    store = _store(args)
    result = pipeline.evaluator(store).evaluate(args.name, args.as_of, _principal(args))
    if args.json:
        sys.stdout.write(pipeline.metric_json(result) + "\n")
    else:
        print(f"{result['metric']} as of {result['as_of']} = {result['value']}")
        for g in result.get("groups", []):
            print("  " + " ".join(f"{k}={v}" for k, v in g.items()))
    return EXIT_OK


def cmd_metric_report(args) -> int:
    store = _store(args)
    ev = pipeline.evaluator(store)
    principal = _principal(args)
    names = args.names or ev.registry.names()
    for name in names:
        sys.stdout.write(pipeline.metric_json(ev.evaluate(name, args.as_of, principal)) + "\n")
    return EXIT_OK


def cmd_metric_list(args) -> int:
    registry = _store(args).load_config().registry
    for name in registry.names():
        d = registry.get(name)
        print(f"{name}  {d.version[:12]}  {','.join(registry.sources(name))}")
    return EXIT_OK


# -- audit and policy ---------------------------------------------------------------
def cmd_audit_verify(args) -> int:
    report = _store(args).governance().audit.verify()
    if args.json:
        _emit_json(report.to_dict())
    elif report.ok:
        print(f"audit chain ok: {report.events} events, tail sequence {report.tail_sequence}")
    else:
        print(f"audit chain BROKEN at sequence {report.broken_at}: {report.reason}")
    return EXIT_OK if report.ok else EXIT_INTEGRITY


def cmd_audit_compact(args) -> int:
    tomb = _store(args).governance().audit.compact(args.as_of, args.retention_days)
    if tomb is None:
        print("nothing older than the retention window")
    else:
        print(f"compacted {tomb['removed_count']} events into a tombstone at sequence {tomb['sequence']}")
    return EXIT_OK


def cmd_policy_load(args) -> int:
    store = _store(args)
    config = store.load_config()
    path = Path(args.file) if args.file else store.config_dir / "policies.json"
    policies, changed = store.governance(config.registry).load(path.read_bytes(), args.as_of, _principal(args))
    print(f"policy version {policies.version[:12]} {'activated' if changed else 'unchanged'}")
    return EXIT_OK


def cmd_policy_show(args) -> int:
    store = _store(args)
    policies = store.governance(store.load_config().registry).active()
    _emit_json({"version": policies.version, "policies": [p.to_dict() for p in policies.policies]})
    return EXIT_OK


# -- synth ----------------------------------------------------------------------------
def cmd_synth_generate(args) -> int:
    from .synth import ScenarioConfig, generate

    config = ScenarioConfig.load(Path(args.config))
    manifest = generate(config, Path(args.out))
    print(f"wrote {len(manifest['files'])} files and {len(manifest['faults'])} faults to {args.out}")
    return EXIT_OK


def cmd_synth_load(args) -> int:
    from .synth import load_scenario

    store = _store(args)
    n = load_scenario(store, Path(args.dir), args.through)
    print(f"ingested {n} files")
    return EXIT_OK


def cmd_synth_score(args) -> int:
    from .synth import score_store

    result = score_store(_store(args), Path(args.manifest), args.as_of)
    if args.json:
        _emit_json(result)
    else:
        for kind, s in result["by_kind"].items():
            print(f"{kind:24s} expected {s['expected']:4d} detected {s['detected']:4d} "
                  f"recall {s['recall']} precision {s['precision']}")
        print(f"unexplained findings: {len(result['unexplained'])}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gera", description="Reconciliation, inventory and governed metrics over daily extracts.")
    p.add_argument("--store", help="store root (default: $GERA_STORE)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(parent, name, func, help_text):
        sp = parent.add_parser(name, help=help_text)
        sp.set_defaults(func=func)
        return sp

    def as_of(sp):
        sp.add_argument("--as-of", type=_date, required=True, dest="as_of")

    def governed(sp, territory=False):
        as_of(sp)
        sp.add_argument("--role", help="principal role (default: $GERA_ROLE)")
        if territory:
            sp.add_argument("--territory", action="append", help="asserted territory; repeatable")
        sp.add_argument("--json", action="store_true")

    add(sub, "init", cmd_init, "create a store with the default configuration")

    sp = add(sub, "ingest", cmd_ingest, "load one extract file into the raw tier")
    sp.add_argument("--source", required=True)
    sp.add_argument("--entity", required=True)
    as_of(sp)
    sp.add_argument("--format", choices=("csv", "ndjson"))
    sp.add_argument("file")

    sp = add(sub, "run", cmd_run, "stage, reconcile, snapshot, detect and age for one date")
    as_of(sp)
    sp.add_argument("--lookback", type=int, default=pipeline.DEFAULT_LOOKBACK_DAYS)
    sp.add_argument("--json", action="store_true")

    raw = sub.add_parser("raw", help="raw tier maintenance").add_subparsers(dest="raw_cmd", required=True, parser_class=_Parser)
    add(raw, "verify", cmd_raw_verify, "recompute every partition digest")

    recon = sub.add_parser("recon", help="reconciliation reports").add_subparsers(dest="recon_cmd", required=True, parser_class=_Parser)
    governed(add(recon, "report", cmd_recon_report, "per-spec match rates and exception aging"))

    exc = sub.add_parser("exceptions", help="the exception queue").add_subparsers(dest="exc_cmd", required=True, parser_class=_Parser)
    sp = add(exc, "list", cmd_exceptions_list, "list exceptions visible to the principal")
    governed(sp)
    sp.add_argument("--status")
    sp.add_argument("--spec")
    sp = add(exc, "resolve", cmd_exceptions_resolve, "close an exception by hand")
    sp.add_argument("exception_id")
    sp.add_argument("--note", required=True)
    sp.add_argument("--owner")
    as_of(sp)
    sp = add(exc, "assign", cmd_exceptions_assign, "set the owner of an exception")
    sp.add_argument("exception_id")
    sp.add_argument("--owner", required=True)
    as_of(sp)

    inv = sub.add_parser("inventory", help="inventory aging and anomaly flags").add_subparsers(dest="inv_cmd", required=True, parser_class=_Parser)
    governed(add(inv, "aging", cmd_inventory_aging, "FIFO aging buckets per material and location"))
    governed(add(inv, "flags", cmd_inventory_flags, "open anomaly flags, strongest first"))
    sp = add(inv, "disposition", cmd_inventory_disposition, "record a flag disposition")
    sp.add_argument("flag_id")
    sp.add_argument("--set", required=True, choices=("confirmed", "false_positive"))
    sp.add_argument("--note", required=True)
    as_of(sp)

    met = sub.add_parser("metric", help="governed metrics").add_subparsers(dest="metric_cmd", required=True, parser_class=_Parser)
    sp = add(met, "eval", cmd_metric_eval, "evaluate one metric")
    sp.add_argument("name")
    governed(sp, territory=True)
    sp = add(met, "report", cmd_metric_report, "every metric (or those named) as one JSON line each")
    sp.add_argument("names", nargs="*")
    governed(sp, territory=True)
    add(met, "list", cmd_metric_list, "registered metrics and their definition digests")

    aud = sub.add_parser("audit", help="the audit log").add_subparsers(dest="audit_cmd", required=True, parser_class=_Parser)
    sp = add(aud, "verify", cmd_audit_verify, "walk the hash chain")
    sp.add_argument("--json", action="store_true")
    sp = add(aud, "compact", cmd_audit_compact, "fold expired events into a tombstone")
    as_of(sp)
    sp.add_argument("--retention-days", type=int, default=DEFAULT_RETENTION_DAYS, dest="retention_days")

    pol = sub.add_parser("policy", help="row-level security policies").add_subparsers(dest="policy_cmd", required=True, parser_class=_Parser)
    sp = add(pol, "load", cmd_policy_load, "validate and activate a policy file")
    sp.add_argument("file", nargs="?")
    as_of(sp)
    sp.add_argument("--role", help="principal role (default: $GERA_ROLE)")
    add(pol, "show", cmd_policy_show, "print the active policy set")

    syn = sub.add_parser("synth", help="synthetic scenarios").add_subparsers(dest="synth_cmd", required=True, parser_class=_Parser)
    sp = add(syn, "generate", cmd_synth_generate, "write extracts and a ground-truth manifest")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp = add(syn, "load", cmd_synth_load, "ingest a generated scenario into the store")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--through", type=_date)
    sp = add(syn, "score", cmd_synth_score, "recall and precision against the manifest")
    sp.add_argument("--manifest", required=True)
    as_of(sp)
    sp.add_argument("--json", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GeraError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
