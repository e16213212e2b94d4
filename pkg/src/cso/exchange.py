"""Canonical exchange format: one JSON envelope per line (``.csolog``).

An envelope is ``{"v": 1, "kind": ..., "entity": ..., "ts": ..., "body": {...}}``.
Keys are written in that order, nested keys sorted, with no insignificant
whitespace, so equal envelopes serialize to identical bytes.  Unknown keys, at
envelope level or inside a body, are carried through untouched.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from jsonschema import Draft202012Validator

from .canonical import canonical_bytes, envelope_bytes
from .errors import CSOError, RecordSyntaxError, SchemaViolation, UnknownRecordKind
from .graph import DependencyEdge, DependencyGraph, Resource
from .ontology import SCHEMA, EntityKind, classify_record
from .provenance import OPERATIONS, ProvenanceEvent
from .records import (
    ASSESSMENTS,
    RIGHTS,
    AccessControlPolicy,
    AssessmentRule,
    AttackRecord,
    CloudServiceEntry,
    CloudSubscription,
    ConfigurationEntry,
    DetectionRule,
    EventRecord,
    Identity,
    IncidentRecord,
    ProductVersionEntry,
    ProviderResourceEntry,
    Record,
    SecurityLevelReport,
    ThreatEntry,
    VulnerabilityEntry,
    Warning,
    parse_ts,
    utc_now,
)

FORMAT_VERSION = 1

RECORD_TYPES: dict[str, type[Record]] = {
    cls.KIND: cls
    for cls in (
        EventRecord, IncidentRecord, AttackRecord, Warning, CloudSubscription,
        AccessControlPolicy, Identity, ProviderResourceEntry, SecurityLevelReport,
        VulnerabilityEntry, ThreatEntry, AssessmentRule, DetectionRule,
        ProductVersionEntry, ConfigurationEntry, CloudServiceEntry, Resource,
        DependencyEdge, ProvenanceEvent,
    )
}

# -- body schemas ---------------------------------------------------------------

_ID = {"type": "string", "minLength": 1}
_TEXT = {"type": "string"}
_IDS = {"type": "array", "items": _ID}
_OBJ = {"type": "object"}
_HEX = {"type": "string", "pattern": "^[0-9a-f]+$"}


def _obj(required: dict[str, Any], optional: dict[str, Any] | None = None) -> dict:
    props = dict(required)
    props.update(optional or {})
    return {"type": "object", "required": list(required), "properties": props}


def _enum(*values: str) -> dict:
    return {"enum": list(values)}


def _nullable(schema: dict) -> dict:
    return {"anyOf": [{"type": "null"}, schema]}


_RULE = _obj(
    {"id": _ID, "body": {"anyOf": [{"type": "string", "minLength": 1},
                                   {"type": "array", "minItems": 1}]}},
    {"applicability": _IDS},
)

BODY_SCHEMAS: dict[str, dict] = {
    "event": _obj(
        {"id": _ID, "timestamp": _ID, "source": _ID, "actor": _ID, "action": _TEXT},
        {"attributes": _OBJ},
    ),
    "incident": _obj(
        {"id": _ID, "subject": _obj({"type": _enum("resource", "data"), "id": _ID}), "state": _TEXT},
        {"expected_consequence": _TEXT, "assessment": _enum(*ASSESSMENTS), "event_ids": _IDS},
    ),
    "attack": _obj(
        {"id": _ID, "initiation": _TEXT},
        {"incident_ids": _IDS, "targets": _IDS,
         "propagation": {"type": "array",
                         "items": {"type": "array", "items": _ID, "minItems": 2, "maxItems": 2}}},
    ),
    "warning": _obj(
        {"id": _ID, "risk_ref": _ID, "at_risk_resource": _ID,
         "recipients": {"type": "array", "items": _ID, "minItems": 1, "uniqueItems": True}},
        {"basis": _enum("owner", "subscriber", "data_owner"), "dependency_path": _IDS,
         "severity": _nullable(_obj({"value": {"type": "number", "minimum": 0, "maximum": 10},
                                     "method": _enum("cvss2_base", "aggregate_max")}))},
    ),
    "subscription": _obj(
        {"org": _ID, "service": _ID},
        {"contract": _TEXT, "usage_records": {"type": "array"}},
    ),
    "policy": _obj(
        {"data_id": _ID, "subject": _ID,
         "rights": {"type": "array", "items": _enum(*RIGHTS), "uniqueItems": True}},
        {"location_constraint": _nullable(_IDS)},
    ),
    "identity": _obj(
        {"user_id": _ID,
         "identities": {"type": "array", "minItems": 1, "items": _obj(
             {"id": _ID, "status": _enum("valid", "invalid")},
             {"reputation": _nullable({"type": "number"})})}},
        {"registrations": _IDS},
    ),
    "provider_resource": _obj(
        {"id": _ID, "kind": _enum("network", "cloud_service"), "spec": _OBJ},
        {"security_policy": _TEXT, "workload": _nullable(_OBJ)},
    ),
    "seclevel": _obj(
        {"id": _ID, "subject": _ID, "issuer": _ID},
        {"evaluation": {"type": "array", "items": _obj(
            {"metric": _ID, "value": {"type": ["number", "string"]}},
            {"section": _enum("local", "cloud")})},
         "certificate": _nullable(_obj(
             {"issuer": _ID, "scope": _TEXT, "issued_at": _ID, "expires_at": _ID}))},
    ),
    "vulnerability": _obj(
        {"id": {"type": "string", "pattern": "^VLN-[0-9]{4}-[0-9]+$"},
         "description": _TEXT, "kind": _enum("code", "configuration", "human")},
        {"affected": _IDS, "impact_layers": _IDS, "cvss_vector": _nullable(_ID)},
    ),
    "threat": _obj(
        {"id": _ID, "kind": _enum("attack", "misuse")},
        {"attack": _nullable(_obj({"pattern": _TEXT}, {"tool": _TEXT, "trend": _TEXT})),
         "misuse": _nullable(_obj({"intent": _enum("benign", "malicious")},
                                  {"description": _TEXT}))},
    ),
    "assessment_rule": _RULE,
    "detection_rule": _RULE,
    "version": _obj({"product": _ID, "version": _ID}, {"patches": _IDS}),
    "configuration": _obj(
        {"id": _ID, "targets": {"type": "array", "items": _ID, "minItems": 1}},
        {"settings": _OBJ},
    ),
    "cloud_service": _obj(
        {"id": _ID, "provider": _ID, "service": _ID,
         "taxonomy_path": {"type": "array", "items": _ID, "minItems": 1}},
    ),
    "resource": _obj(
        {"id": _ID, "name": _TEXT, "layer": _ID, "owner_org": _ID},
        {"locus": _enum("local", "cloud"), "provider": _nullable(_ID)},
    ),
    "dependency": _obj({"dependent": _ID, "dependee": _ID}),
    "provenance": _obj(
        {"seq": {"type": "integer", "minimum": 0}, "data_id": _ID, "actor": _ID,
         "operation": _enum(*OPERATIONS), "payload": _OBJ, "prev_digest": _HEX,
         "digest": _HEX, "digest_alg": _ID},
    ),
}

_VALIDATORS = {kind: Draft202012Validator(schema) for kind, schema in BODY_SCHEMAS.items()}


def _violation_field(error) -> str:
    path = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        missing = [k for k in error.validator_value if k not in error.instance]
        path.append(missing[0])
    return ".".join(path) or "body"


def validate_body(kind: str, body: Any) -> Record:
    """Check ``body`` against its kind schema and invariants; return the typed record."""
    try:
        validator = _VALIDATORS[kind]
    except (KeyError, TypeError):
        raise UnknownRecordKind(kind) from None
    errors = sorted(validator.iter_errors(body), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise SchemaViolation(_violation_field(errors[0]), errors[0].message)
    record = RECORD_TYPES[kind].from_body(body)
    try:
        record.check()
    except SchemaViolation:
        raise
    except CSOError as exc:
        raise SchemaViolation(kind, str(exc)) from None
    return record


# -- envelopes ------------------------------------------------------------------

@dataclass
class RecordEnvelope:
    kind: str
    body: dict
    entity: str = EntityKind.ADMINISTRATOR.value
    ts: str = field(default_factory=utc_now)
    v: int = FORMAT_VERSION
    extensions: dict = field(default_factory=dict)

    def record(self) -> Record:
        return validate_body(self.kind, self.body)

    @property
    def key(self) -> str:
        return RECORD_TYPES[self.kind].from_body(self.body).key

    def to_document(self) -> dict[str, Any]:
        doc = {"v": self.v, "kind": self.kind, "entity": self.entity, "ts": self.ts, "body": self.body}
        doc.update(self.extensions)
        return doc


def envelope_for(record: Record, entity: str | EntityKind = EntityKind.ADMINISTRATOR,
                 ts: str | None = None) -> RecordEnvelope:
    entity = EntityKind(entity).value
    return RecordEnvelope(record.KIND, record.to_body(), entity, ts or utc_now())


def _decode(data: bytes | str, line: int) -> Any:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RecordSyntaxError(f"invalid UTF-8: {exc.reason}", line, exc.start + 1) from None
    else:
        text = data
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordSyntaxError(exc.msg, line + exc.lineno - 1, exc.colno) from None
    except RecursionError:
        raise RecordSyntaxError("nesting too deep", line, 1) from None


def parse_record(data: bytes | str, *, line: int = 1) -> RecordEnvelope:
    doc = _decode(data, line)
    if not isinstance(doc, dict):
        raise SchemaViolation("envelope", "document must be a JSON object")
    for key in ("v", "kind", "entity", "ts", "body"):
        if key not in doc:
            raise SchemaViolation(key, "required envelope key")
    v = doc["v"]
    if type(v) is not int or v != FORMAT_VERSION:
        raise SchemaViolation("v", f"unsupported format version {v!r}")
    kind = doc["kind"]
    if kind not in RECORD_TYPES:
        raise UnknownRecordKind(kind)
    try:
        entity = EntityKind(doc["entity"]).value
    except ValueError:
        raise SchemaViolation("entity", f"unknown entity kind {doc['entity']!r}") from None
    parse_ts(doc["ts"], "ts")
    validate_body(kind, doc["body"])
    extensions = {k: val for k, val in doc.items() if k not in ("v", "kind", "entity", "ts", "body")}
    return RecordEnvelope(kind, doc["body"], entity, doc["ts"], v, extensions)


def serialize_record(envelope: RecordEnvelope) -> bytes:
    return envelope_bytes(envelope.to_document())


def parse_body(kind: str, data: bytes | str) -> Record:
    """Parse a bare record body (no envelope) of a known kind."""
    return validate_body(kind, _decode(data, 1))


def serialize_body(record: Record) -> bytes:
    return canonical_bytes(record.to_body())


# -- documents ------------------------------------------------------------------

def schema_document() -> dict[str, Any]:
    return {"format_version": FORMAT_VERSION, "ontology": SCHEMA.to_document()}


def graph_envelopes(graph: DependencyGraph, entity: str = "Administrator",
                    ts: str | None = None) -> list[RecordEnvelope]:
    """Resources followed by dependencies, ready to re-import in order."""
    ts = ts or utc_now()
    out = [envelope_for(graph.get(rid), entity, ts) for rid in sorted(r.id for r in graph)]
    out += [envelope_for(edge, entity, ts) for edge in sorted(graph.edges(), key=lambda e: e.key)]
    return out


def write_lines(path: str | Path, envelopes: Iterable[RecordEnvelope]) -> None:
    with open(path, "wb") as fh:
        for env in envelopes:
            fh.write(serialize_record(env) + b"\n")


# -- ingest ---------------------------------------------------------------------

@dataclass
class IngestReport:
    ingested: int = 0
    rejected: int = 0
    per_store: Counter = field(default_factory=Counter)
    errors: list = field(default_factory=list)  # (line number, message)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ingested": self.ingested,
            "rejected": self.rejected,
            "per_store": dict(sorted(self.per_store.items())),
            "errors": [{"line": n, "error": msg} for n, msg in self.errors],
        }


def import_lines(lines: Iterable[bytes], stores) -> IngestReport:
    report = IngestReport()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            env = parse_record(raw.rstrip(b"\r\n"), line=lineno)
            stores.put(classify_record(env), env)
        except CSOError as exc:
            report.rejected += 1
            report.errors.append((lineno, f"{type(exc).__name__}: {exc}"))
        else:
            report.ingested += 1
            report.per_store[classify_record(env).value] += 1
    return report


def import_file(path: str | Path, stores) -> IngestReport:
    """Route every valid line of ``path`` into ``stores``; bad lines are reported."""
    with open(path, "rb") as fh:
        return import_lines(fh, stores)
