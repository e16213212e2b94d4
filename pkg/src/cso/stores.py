"""Append-only record stores, one newline-delimited log per store kind.

Records are never edited or removed.  Superseding a record writes a tombstone
line (an envelope carrying ``"tombstone": true``) followed by the new record;
queries only see live records.  At open time the logs are replayed into
memory, rebuilding the resource graph and the lookup indexes.
"""

from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .errors import (
    CSOError,
    InvariantViolation,
    MissingReference,
    StoreMismatch,
)
from .exchange import RecordEnvelope, envelope_for, parse_record, serialize_record
from .graph import DEFAULT_LAYERS, DependencyEdge, DependencyGraph, Resource
from .ontology import StoreKind, classify_record
from .provenance import ProvenanceEvent, ProvenanceLedger, zero_digest
from .records import (
    AccessControlPolicy,
    CloudSubscription,
    EventRecord,
    Record,
    VulnerabilityEntry,
    parse_ts,
    utc_now,
)

log = logging.getLogger(__name__)

LOG_SUFFIX = ".csolog"


@dataclass(frozen=True)
class Unresolved:
    store: str
    record: str
    field: str
    ref: str

    def to_dict(self) -> dict[str, str]:
        return {"store": self.store, "record": self.record, "field": self.field, "ref": self.ref}


class RecordStores:
    """The four databases and six leaf knowledge bases.

    With ``state_dir`` set every accepted record is appended (and fsynced) to
    ``<state_dir>/<StoreKind>.csolog``; without it the stores live in memory.
    """

    def __init__(self, state_dir: str | Path | None = None, *,
                 layers: Sequence[str] = DEFAULT_LAYERS, durable: bool = True) -> None:
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.durable = durable
        self.graph = DependencyGraph(layers)
        self._entries: dict[StoreKind, list[tuple[str, RecordEnvelope]]] = {s: [] for s in StoreKind}
        self._live: dict[StoreKind, dict[str, RecordEnvelope]] = {s: {} for s in StoreKind}
        self._records: dict[int, Record] = {}
        self._event_clock: dict[str, Any] = {}
        self._identity_owner: dict[str, str] = {}
        self._chains: dict[str, list[ProvenanceEvent]] = {}
        self.corrupt: list[tuple[str, int, str]] = []
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._replay()

    # -- persistence ---------------------------------------------------------

    def log_path(self, store: StoreKind) -> Path:
        assert self.state_dir is not None
        return self.state_dir / f"{StoreKind(store).value}{LOG_SUFFIX}"

    def _write(self, store: StoreKind, env: RecordEnvelope) -> None:
        if self.state_dir is None:
            return
        with open(self.log_path(store), "ab") as fh:
            fh.write(serialize_record(env) + b"\n")
            if self.durable:
                fh.flush()
                os.fsync(fh.fileno())

    def _replay(self) -> None:
        for store in StoreKind:
            path = self.log_path(store)
            if not path.exists():
                continue
            with open(path, "rb") as fh:
                for lineno, raw in enumerate(fh, start=1):
                    if not raw.strip():
                        continue
                    try:
                        env = parse_record(raw.rstrip(b"\r\n"), line=lineno)
                        if env.extensions.get("tombstone"):
                            self._retire(store, env.key)
                        else:
                            self._index(store, env, env.record())
                    except CSOError as exc:
                        log.warning("%s line %d unreadable: %s", path.name, lineno, exc)
                        self.corrupt.append((store.value, lineno, str(exc)))

    # -- writing ---------------------------------------------------------------

    def put(self, store: StoreKind, record: Record | RecordEnvelope, *,
            entity: str | None = None, ts: str | None = None, replace: bool = False) -> str:
        """Validate and append a record; return its key."""
        store = StoreKind(store)
        if isinstance(record, RecordEnvelope):
            env = record
            typed = env.record()
        else:
            typed = record
            try:
                typed.check()
            except InvariantViolation:
                raise
            except CSOError as exc:
                raise InvariantViolation(str(exc)) from None
            env = envelope_for(typed, entity or "Administrator", ts)
        home = classify_record(env)
        if home is not store:
            raise StoreMismatch(store.value, env.kind)
        if env.extensions.get("tombstone"):
            self.tombstone(store, typed.key)
            return typed.key
        key = typed.key
        if key in self._live[store]:
            if not replace:
                raise InvariantViolation(f"{env.kind} {key!r} already stored in {store.value}")
            if env.kind in ("resource", "dependency", "provenance"):
                raise InvariantViolation(f"{env.kind} records cannot be superseded")
        self._check(store, env, typed)
        if key in self._live[store]:
            self.tombstone(store, key)
        self._index(store, env, typed)
        self._write(store, env)
        return key

    def put_record(self, record: Record, *, entity: str = "Administrator",
                   replace: bool = False) -> str:
        return self.put(classify_record(record.KIND), record, entity=entity, replace=replace)

    def tombstone(self, store: StoreKind, key: str, reason: str = "") -> None:
        store = StoreKind(store)
        try:
            live = self._live[store][key]
        except KeyError:
            raise MissingReference(f"no live record {key!r} in {store.value}") from None
        if live.kind in ("resource", "dependency", "provenance"):
            raise InvariantViolation(f"{live.kind} records cannot be tombstoned in the store")
        ext = {"tombstone": True}
        if reason:
            ext["reason"] = reason
        marker = RecordEnvelope(live.kind, live.body, live.entity, utc_now(), live.v, ext)
        self._retire(store, key)
        self._write(store, marker)

    def retire_resource(self, rid: str) -> None:
        """Resources are never deleted; retiring marks them in the graph only."""
        self.graph.tombstone(rid)

    def _check(self, store: StoreKind, env: RecordEnvelope, rec: Record) -> None:
        kind = env.kind
        if kind == "event":
            last = self._event_clock.get(rec.source)
            if last is not None and parse_ts(rec.timestamp, "timestamp") < last:
                raise InvariantViolation(f"event {rec.id} is older than the last event from {rec.source}")
        elif kind == "identity":
            for iid in rec.identity_ids:
                holder = self._identity_owner.get(iid)
                if holder is not None and holder != rec.user_id:
                    raise InvariantViolation(f"identity {iid!r} already belongs to {holder}")
        elif kind == "cloud_service":
            for other in self._live[store].values():
                if (other.kind == "cloud_service" and other.body["id"] != rec.id
                        and (other.body["provider"], other.body["service"]) == (rec.provider, rec.service)):
                    raise InvariantViolation(f"{rec.provider}/{rec.service} already enumerated")
        elif kind == "vulnerability":
            bad = [layer for layer in rec.impact_layers if layer not in self.graph.layers]
            if bad:
                raise InvariantViolation(f"unknown impact layers {bad}")
        elif kind == "resource":
            if rec.layer not in self.graph.layers:
                raise InvariantViolation(f"resource {rec.id}: unknown layer {rec.layer!r}")
        elif kind == "dependency":
            # cycles and tombstoned endpoints are rejected by add_dependency in _index
            for rid in (rec.dependent, rec.dependee):
                if rid not in self.graph:
                    raise InvariantViolation(f"dependency endpoint {rid!r} is not a known resource")
        elif kind == "provenance":
            chain = self._chains.get(rec.data_id, [])
            if chain and chain[-1].operation == "delete":
                raise InvariantViolation(f"{rec.data_id} was deleted; nothing may follow")
            expected_prev = chain[-1].digest if chain else zero_digest(rec.digest_alg)
            if rec.seq != len(chain):
                raise InvariantViolation(f"provenance seq {rec.seq} for {rec.data_id}, expected {len(chain)}")
            if (rec.seq == 0) != (rec.operation == "create"):
                raise InvariantViolation("create must be exactly the first provenance event")
            if rec.prev_digest != expected_prev or rec.digest != rec.compute_digest():
                raise InvariantViolation(f"provenance event {rec.key} does not link into its chain")

    def _index(self, store: StoreKind, env: RecordEnvelope, rec: Record) -> None:
        key = rec.key
        if env.kind == "resource":
            self.graph.add_resource(rec)
        elif env.kind == "dependency":
            self.graph.add_dependency(rec)
        elif env.kind == "event":
            ts = parse_ts(rec.timestamp, "timestamp")
            prev = self._event_clock.get(rec.source)
            self._event_clock[rec.source] = ts if prev is None else max(prev, ts)
        elif env.kind == "identity":
            for iid in rec.identity_ids:
                self._identity_owner[iid] = rec.user_id
        elif env.kind == "provenance":
            self._chains.setdefault(rec.data_id, []).append(rec)
        self._entries[store].append((key, env))
        self._live[store][key] = env
        self._records[id(env)] = rec

    def _retire(self, store: StoreKind, key: str) -> None:
        env = self._live[store].pop(key, None)
        if env is not None and env.kind == "identity":
            for iid in self._records[id(env)].identity_ids:
                self._identity_owner.pop(iid, None)

    # -- reading ---------------------------------------------------------------

    def query(self, store: StoreKind, predicate: Callable[[Record], bool] | None = None,
              *, include_retired: bool = False) -> list[Record]:
        """Live records of ``store`` matching ``predicate``, in insertion order."""
        store = StoreKind(store)
        live = self._live[store]
        out = []
        for key, env in self._entries[store]:
            if not include_retired and live.get(key) is not env:
                continue
            rec = self._records[id(env)]
            if predicate is None or predicate(rec):
                out.append(rec)
        return out

    def envelopes(self, store: StoreKind) -> list[RecordEnvelope]:
        store = StoreKind(store)
        live = self._live[store]
        return [env for key, env in self._entries[store] if live.get(key) is env]

    def get(self, store: StoreKind, key: str) -> Record:
        store = StoreKind(store)
        try:
            return self._records[id(self._live[store][key])]
        except KeyError:
            raise MissingReference(f"no {key!r} in {store.value}") from None

    def of_kind(self, kind: str) -> list[Record]:
        store = classify_record(kind)
        return self.query(store, lambda r: r.KIND == kind)

    def find(self, key: str, kinds: Iterable[str]) -> Record | None:
        for kind in kinds:
            try:
                rec = self.get(classify_record(kind), key)
            except MissingReference:
                continue
            if rec.KIND == kind:
                return rec
        return None

    def subscriptions(self) -> list[CloudSubscription]:
        return self.of_kind("subscription")

    def policies(self) -> list[AccessControlPolicy]:
        return self.of_kind("policy")

    def provenance_events(self) -> list[ProvenanceEvent]:
        return self.query(StoreKind.INCIDENT_DB, lambda r: r.KIND == "provenance")

    def ledger(self, **kwargs) -> ProvenanceLedger:
        """A ledger over the stored chains that writes back into these stores."""
        ledger = ProvenanceLedger.replay(self.provenance_events(), self.policies(), **kwargs)
        ledger.sink = self
        return ledger

    def known_data_ids(self) -> set[str]:
        ids = {e.data_id for e in self.provenance_events()}
        ids.update(p.data_id for p in self.policies())
        return ids

    def product_refs(self) -> set[str]:
        """Every product/service reference that resolves somewhere."""
        refs = {r.id for r in self.graph}
        refs.update(r.provider for r in self.graph if r.provider)
        for rec in self.of_kind("cloud_service"):
            refs.add(rec.id)
        for rec in self.of_kind("version"):
            refs.update((rec.product, rec.key))
        for rec in self.of_kind("configuration"):
            refs.add(rec.id)
        return refs

    def verify_refs(self) -> list[Unresolved]:
        """Every cross-reference that does not resolve, in store order."""
        out: list[Unresolved] = []
        event_ids = {r.id for r in self.of_kind("event")}
        incident_ids = {r.id for r in self.of_kind("incident")}
        vuln_ids = {r.id for r in self.of_kind("vulnerability")}
        services = {r.id for r in self.of_kind("cloud_service")}
        data_ids = self.known_data_ids()
        resources = {r.id for r in self.graph}
        products = self.product_refs()
        assets = resources | data_ids

        def need(rec: Record, fld: str, refs: Iterable[str], known: set[str]) -> None:
            for ref in refs:
                if ref not in known:
                    out.append(Unresolved(classify_record(rec.KIND).value, rec.key, fld, ref))

        for store in StoreKind:
            for rec in self.query(store):
                kind = rec.KIND
                if kind == "incident":
                    need(rec, "event_ids", rec.event_ids, event_ids)
                    known = resources if rec.subject_type == "resource" else data_ids
                    need(rec, "subject", [rec.subject_id], known)
                elif kind == "attack":
                    need(rec, "incident_ids", rec.incident_ids, incident_ids)
                    need(rec, "targets", rec.targets, assets)
                    need(rec, "propagation", [x for step in rec.propagation for x in step], assets)
                elif kind == "warning":
                    need(rec, "risk_ref", [rec.risk_ref], vuln_ids | incident_ids)
                    need(rec, "at_risk_resource", [rec.at_risk_resource], assets)
                elif kind == "subscription":
                    need(rec, "service", [rec.service], services)
                elif kind == "policy":
                    need(rec, "data_id", [rec.data_id], data_ids)
                elif kind == "provider_resource" and rec.kind == "cloud_service":
                    need(rec, "spec.service", [rec.spec["service"]], services)
                elif kind == "vulnerability":
                    need(rec, "affected", rec.affected, products)
                elif kind in ("assessment_rule", "detection_rule"):
                    need(rec, "applicability", rec.applicability, products)
                elif kind == "configuration":
                    need(rec, "targets", rec.targets, products)
                elif kind == "provenance" and rec.payload.get("host_resource"):
                    need(rec, "payload.host_resource", [rec.payload["host_resource"]], resources)
        return out

    def vulnerabilities_affecting(self, org: str) -> list[tuple[VulnerabilityEntry, list[str]]]:
        return vulnerabilities_affecting(self.graph, org, self.subscriptions(), self.of_kind("vulnerability"))


# -- impact lookups ------------------------------------------------------------

def org_footprint(graph: DependencyGraph, org: str, subscriptions: Iterable) -> dict[str, str]:
    """Resources an org owns or subscribes to, mapped to ``owner``/``subscriber``."""
    out = {}
    for sub in subscriptions:
        if sub.org == org:
            for rid in graph.resolve_ref(sub.service):
                out[rid] = "subscriber"
    for res in graph:
        if res.owner_org == org:
            out[res.id] = "owner"
    return out


def next_hops(graph: DependencyGraph, target: str) -> dict[str, str | None]:
    """For each resource that reaches ``target``, its next step on a shortest path."""
    hop: dict[str, str | None] = {target: None}
    queue = deque([target])
    while queue:
        n = queue.popleft()
        for m in sorted(graph.used_by(n)):
            if m not in hop:
                hop[m] = n
                queue.append(m)
    return hop


def walk(hops: dict[str, str | None], start: str) -> list[str]:
    path = [start]
    while hops[path[-1]] is not None:
        path.append(hops[path[-1]])
    return path


def vulnerabilities_affecting(
    graph: DependencyGraph,
    org: str,
    subscriptions: Iterable,
    vulnerabilities: Iterable[VulnerabilityEntry],
) -> list[tuple[VulnerabilityEntry, list[str]]]:
    """Vulnerabilities that reach ``org`` directly or through dependencies.

    Each hit comes with the shortest chain from one of the org's owned or
    subscribed resources down to the vulnerable resource.
    """
    footprint = org_footprint(graph, org, list(subscriptions))
    if not footprint:
        return []
    out = []
    for vuln in vulnerabilities:
        best: list[str] | None = None
        for ref in vuln.affected:
            for target in sorted(graph.resolve_ref(ref)):
                hops = next_hops(graph, target)
                for start in footprint.keys() & hops.keys():
                    path = walk(hops, start)
                    if best is None or (len(path), path) < (len(best), best):
                        best = path
        if best is not None:
            out.append((vuln, best))
    return out
