"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 validation or ingest failure,
3 provenance tampering detected, 4 missing reference.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path
from typing import Any, Sequence

from filelock import FileLock, Timeout

from . import exchange
from .canonical import dumps
from .errors import (
    AppendAfterDelete,
    CSOError,
    InvariantViolation,
    MissingComponentScore,
    MissingReference,
    RecordSyntaxError,
    UnknownRecordKind,
)
from .graph import DependencyEdge, Resource
from .ontology import EntityKind, StoreKind
from .provenance import ChainStatus
from .scoring import SecurityScore, aggregate_service_score, cvss_base
from .stores import RecordStores
from .warning_engine import find_risk, issue_and_store, warnings_for

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_TAMPERED, EXIT_MISSING = 0, 1, 2, 3, 4
DEFAULT_STATE_DIR = "csostate"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cso", description="Cybersecurity operational information toolkit.")
    p.add_argument("--state-dir", help=f"state directory (env CSO_STATE_DIR, default ./{DEFAULT_STATE_DIR})")
    p.add_argument("--machine", action="store_true", help="emit canonical documents instead of tables")
    p.add_argument("--entity", default=None, choices=[e.value for e in EntityKind],
                   help="asserting entity kind for records written")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("ingest", help="import a .csolog file")
    sp.add_argument("file")

    res = sub.add_parser("resource", help="resource graph").add_subparsers(dest="action", required=True)
    sp = res.add_parser("add")
    sp.add_argument("--id", required=True)
    sp.add_argument("--name", default="")
    sp.add_argument("--layer", required=True)
    sp.add_argument("--owner", required=True)
    sp.add_argument("--locus", choices=("local", "cloud"), default="local")
    sp.add_argument("--provider")
    sp = res.add_parser("dep", help="DEPENDENT utilizes DEPENDEE")
    sp.add_argument("dependent")
    sp.add_argument("dependee")
    sp = res.add_parser("closure")
    sp.add_argument("id")
    sp.add_argument("--dependees", action="store_true", help="what ID utilizes instead of what utilizes ID")
    sp = res.add_parser("layers")
    sp.add_argument("id")
    res.add_parser("export")

    sp = sub.add_parser("query", help="list records of a store")
    sp.add_argument("store", choices=[s.value for s in StoreKind])
    sp.add_argument("filter", nargs="*", help="field=value terms, dotted paths allowed")

    warn = sub.add_parser("warn").add_subparsers(dest="action", required=True)
    for name in ("simulate", "issue"):
        sp = warn.add_parser(name)
        sp.add_argument("--risk", required=True)

    prov = sub.add_parser("provenance").add_subparsers(dest="action", required=True)
    sp = prov.add_parser("append")
    sp.add_argument("--data", required=True)
    sp.add_argument("--actor", required=True)
    sp.add_argument("--op", required=True)
    sp.add_argument("--payload", default="{}", help="JSON object")
    sp.add_argument("--log-reads", action="store_true")
    sp = prov.add_parser("verify")
    sp.add_argument("--data")
    sp = prov.add_parser("history")
    sp.add_argument("--data", required=True)

    score = sub.add_parser("score").add_subparsers(dest="action", required=True)
    sp = score.add_parser("base")
    sp.add_argument("--vector", required=True)
    sp = score.add_parser("aggregate")
    sp.add_argument("--service", required=True)
    sp.add_argument("--score", action="append", default=[], metavar="RESOURCE=VALUE")
    sp.add_argument("--skip-unscored", action="store_true")

    tax = sub.add_parser("taxonomy").add_subparsers(dest="action", required=True)
    tax.add_parser("list")
    schema = sub.add_parser("schema").add_subparsers(dest="action", required=True)
    schema.add_parser("export")
    sub.add_parser("verify-refs")
    return p


def state_dir(args: argparse.Namespace) -> Path:
    return Path(args.state_dir or os.environ.get("CSO_STATE_DIR") or DEFAULT_STATE_DIR)


class Output:
    def __init__(self, machine: bool, stream=None) -> None:
        self.machine = machine
        self.stream = stream or sys.stdout

    def line(self, text: str = "") -> None:
        print(text, file=self.stream)

    def doc(self, obj: Any) -> None:
        self.line(dumps(obj))

    def records(self, records, entity: str = "Administrator") -> None:
        for rec in records:
            if self.machine:
                env = exchange.envelope_for(rec, entity)
                self.line(exchange.serialize_record(env).decode("utf-8"))
            else:
                self.line(f"{rec.KIND:<16} {rec.key:<32} {dumps(rec.to_body())}")


def _lookup(obj: Any, path: str) -> Any:
    for part in path.split("."):
        if isinstance(obj, dict):
            obj = obj.get(part)
        elif isinstance(obj, list) and part.isdigit() and int(part) < len(obj):
            obj = obj[int(part)]
        else:
            return None
    return obj


def _matches(body: dict, terms: list[tuple[str, str]]) -> bool:
    for path, want in terms:
        got = _lookup(body, path)
        values = got if isinstance(got, list) else [got]
        if not any((v if isinstance(v, str) else json.dumps(v)) == want for v in values):
            return False
    return True


# -- command handlers ----------------------------------------------------------

def cmd_ingest(args, stores: RecordStores, out: Output) -> int:
    report = exchange.import_file(args.file, stores)
    if out.machine:
        out.doc(report.to_dict())
    else:
        out.line(f"ingested {report.ingested}, rejected {report.rejected}")
        for store, n in sorted(report.per_store.items()):
            out.line(f"  {store:<24} {n}")
        for lineno, msg in report.errors:
            out.line(f"  line {lineno}: {msg}")
    return EXIT_INVALID if report.rejected and not report.ingested else EXIT_OK


def cmd_resource(args, stores: RecordStores, out: Output) -> int:
    g = stores.graph
    if args.action == "add":
        res = Resource(args.id, args.name or args.id, args.layer, args.owner, args.locus, args.provider)
        stores.put(StoreKind.USER_RESOURCE_DB, res, entity=args.entity)
        out.records([res]) if out.machine else out.line(f"added {res.id}")
    elif args.action == "dep":
        for rid in (args.dependent, args.dependee):
            g.get(rid)
        edge = DependencyEdge(args.dependent, args.dependee)
        stores.put(StoreKind.USER_RESOURCE_DB, edge, entity=args.entity)
        out.records([edge]) if out.machine else out.line(f"{edge.dependent} -> {edge.dependee}")
    elif args.action == "closure":
        ids = g.dependees_closure(args.id) if args.dependees else g.dependents_closure(args.id)
        ids = sorted(ids)
        if out.machine:
            direction = "dependees" if args.dependees else "dependents"
            out.doc({"resource": args.id, direction: ids})
        else:
            for rid in ids:
                r = g.get(rid)
                out.line(f"{rid:<24} {r.layer:<16} {r.owner_org}")
    elif args.action == "layers":
        layers = g.sorted_layers(g.impact_layers(args.id))
        out.doc({"resource": args.id, "layers": layers}) if out.machine else out.line(" ".join(layers))
    elif args.action == "export":
        for env in exchange.graph_envelopes(g):
            out.line(exchange.serialize_record(env).decode("utf-8"))
    return EXIT_OK


def cmd_query(args, stores: RecordStores, out: Output) -> int:
    terms = []
    for term in args.filter:
        path, sep, value = term.partition("=")
        if not sep or not path:
            raise UsageError(f"filter term {term!r} is not field=value")
        terms.append((path, value))
    hits = [env for env in stores.envelopes(StoreKind(args.store)) if _matches(env.body, terms)]
    for env in hits:
        if out.machine:
            out.line(exchange.serialize_record(env).decode("utf-8"))
        else:
            out.line(f"{env.kind:<16} {env.key:<32} {dumps(env.body)}")
    return EXIT_OK


def cmd_warn(args, stores: RecordStores, out: Output) -> int:
    risk = find_risk(stores, args.risk)
    if risk is None:
        raise MissingReference(f"no vulnerability or incident {args.risk!r}")
    if args.action == "issue":
        issued = issue_and_store(stores, risk, entity=args.entity or "ResponseTeam")
    else:
        issued = warnings_for(stores, risk)
    if out.machine:
        out.records(issued, "ResponseTeam")
    else:
        for w in issued:
            sev = f" severity {w.severity['value']}" if w.severity else ""
            path = " -> ".join(w.dependency_path) or "(data owner)"
            out.line(f"{', '.join(w.recipients):<16} {w.basis:<10} {path}{sev}")
    return EXIT_OK


def _salvage(line: str) -> tuple[str | None, int | None]:
    data = re.search(r'"data_id":"([^"]*)"', line)
    seq = re.search(r'"seq":([0-9]+)', line)
    return (data.group(1) if data else None, int(seq.group(1)) if seq else None)


def cmd_provenance(args, stores: RecordStores, out: Output) -> int:
    ledger = stores.ledger(read_logging=getattr(args, "log_reads", False))
    if args.action == "append":
        try:
            payload = json.loads(args.payload)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--payload is not JSON: {exc}") from None
        if not isinstance(payload, dict):
            raise UsageError("--payload must be a JSON object")
        event, auth = ledger.record(args.data, args.actor, args.op, payload)
        if out.machine:
            if event is not None:
                out.records([event], "ResponseTeam")
            if auth.incident is not None:
                out.records([auth.incident], "ResponseTeam")
        else:
            if event is not None:
                out.line(f"seq {event.seq} {event.operation} by {event.actor} digest {event.digest}")
            out.line("allowed" if auth.allowed else f"VIOLATION: {auth.reason} (incident {auth.incident.id})")
        return EXIT_OK
    if args.action == "history":
        events = ledger.history(args.data)
        if out.machine:
            out.records(events, "ResponseTeam")
        else:
            for ev in events:
                out.line(f"{ev.seq:>6} {ev.operation:<17} {ev.actor:<16} {dumps(ev.payload)}")
        return EXIT_OK

    # verify
    results: dict[str, ChainStatus] = ledger.verify(args.data)
    damaged = {d: s for d, s in results.items() if not s.ok}
    unreadable = []
    for store, lineno, err in stores.corrupt:
        if store != StoreKind.INCIDENT_DB.value:
            continue
        with open(stores.log_path(StoreKind.INCIDENT_DB), "rb") as fh:
            raw = fh.read().splitlines()[lineno - 1].decode("utf-8", "replace")
        data_id, seq = _salvage(raw)
        if args.data is None or data_id in (None, args.data):
            unreadable.append((lineno, data_id, seq, err))
    if out.machine:
        out.doc({
            "chains": {d: {"ok": s.ok, "first_bad_seq": s.first_bad_seq, "reason": s.reason}
                       for d, s in results.items()},
            "unreadable_lines": [{"line": n, "data_id": d, "seq": q, "error": e} for n, d, q, e in unreadable],
        })
    else:
        for d, s in results.items():
            out.line(f"{d}: ok" if s.ok else f"{d}: tampered at seq {s.first_bad_seq} ({s.reason})")
        for n, d, q, e in unreadable:
            out.line(f"IncidentDB line {n}: unreadable provenance record (data {d}, seq {q}): {e}")
    return EXIT_TAMPERED if damaged or unreadable else EXIT_OK


def cmd_score(args, stores: RecordStores, out: Output) -> int:
    if args.action == "base":
        try:
            score = cvss_base(args.vector)
        except ValueError as exc:
            raise UsageError(f"bad vector: {exc}") from None
    else:
        comps = {}
        for item in args.score:
            rid, sep, val = item.partition("=")
            try:
                comps[rid] = SecurityScore(float(val))
            except ValueError:
                raise UsageError(f"--score {item!r} is not RESOURCE=VALUE in [0, 10]") from None
        score = aggregate_service_score(stores.graph, args.service, comps, skip_unscored=args.skip_unscored)
    out.doc(score.to_dict()) if out.machine else out.line(f"{score.value:.1f}")
    return EXIT_OK


def cmd_taxonomy(args, stores: RecordStores, out: Output) -> int:
    entries = sorted(stores.of_kind("cloud_service"), key=lambda e: (e.taxonomy_path, e.provider, e.service))
    if out.machine:
        out.records(entries, "Registrar")
        return EXIT_OK
    shown: list[str] = []
    for e in entries:
        for depth, cat in enumerate(e.taxonomy_path):
            if shown[: depth + 1] != e.taxonomy_path[: depth + 1]:
                out.line("  " * depth + cat)
        shown = list(e.taxonomy_path)
        out.line("  " * len(e.taxonomy_path) + f"{e.provider}/{e.service}  [{e.id}]")
    return EXIT_OK


def cmd_schema(args, stores, out: Output) -> int:
    out.doc(exchange.schema_document())
    return EXIT_OK


def cmd_verify_refs(args, stores: RecordStores, out: Output) -> int:
    missing = stores.verify_refs()
    for m in missing:
        out.doc(m.to_dict()) if out.machine else out.line(f"{m.store}/{m.record}: {m.field} -> {m.ref} unresolved")
    if not missing and not out.machine:
        out.line("all references resolve")
    return EXIT_MISSING if missing else EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest,
    "resource": cmd_resource,
    "query": cmd_query,
    "warn": cmd_warn,
    "provenance": cmd_provenance,
    "score": cmd_score,
    "taxonomy": cmd_taxonomy,
    "schema": cmd_schema,
    "verify-refs": cmd_verify_refs,
}

NEEDS_STATE = set(HANDLERS) - {"schema"}


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    out = Output(args.machine, stdout)
    if args.command == "score" and args.action == "base":
        return _dispatch(args, None, out, stderr)
    if args.command not in NEEDS_STATE:
        return _dispatch(args, None, out, stderr)
    root = state_dir(args)
    root.mkdir(parents=True, exist_ok=True)
    try:
        with FileLock(str(root / ".lock"), timeout=10):
            stores = RecordStores(root)
            return _dispatch(args, stores, out, stderr)
    except Timeout:
        print(f"state directory {root} is locked by another process", file=stderr)
        return EXIT_USAGE


def _dispatch(args, stores, out: Output, stderr) -> int:
    try:
        return HANDLERS[args.command](args, stores, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except AppendAfterDelete as exc:
        print(f"rejected: {exc}", file=stderr)
        return EXIT_INVALID
    except MissingComponentScore as exc:
        print(f"missing score: {exc}", file=stderr)
        return EXIT_MISSING
    except MissingReference as exc:
        print(f"missing reference: {exc}", file=stderr)
        return EXIT_MISSING
    except (InvariantViolation, RecordSyntaxError, UnknownRecordKind, CSOError) as exc:
        print(f"invalid: {exc}", file=stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
