"""Executable ontology of cybersecurity operational information for cloud settings."""

from .errors import CSOError
from .exchange import RecordEnvelope, import_file, parse_record, serialize_record
from .graph import DEFAULT_LAYERS, DependencyEdge, DependencyGraph, Resource
from .ontology import (
    SCHEMA,
    EntityKind,
    OperationDomain,
    StandardId,
    StoreKind,
    classify_record,
    domain_of,
    manipulators_of,
    standards_for,
)
from .provenance import (
    ProvenanceEvent,
    ProvenanceLedger,
    check_authorization,
    read_event,
    verify_chain,
    verify_lines,
)
from .scoring import ScoreVector, SecurityScore, aggregate_service_score, assess, cvss_base
from .stores import RecordStores, vulnerabilities_affecting
from .warning_engine import issue_warnings, relevance

__version__ = "0.1.0"

__all__ = [
    "CSOError", "RecordEnvelope", "import_file", "parse_record", "serialize_record",
    "DEFAULT_LAYERS", "DependencyEdge", "DependencyGraph", "Resource",
    "SCHEMA", "EntityKind", "OperationDomain", "StandardId", "StoreKind",
    "classify_record", "domain_of", "manipulators_of", "standards_for",
    "ProvenanceEvent", "ProvenanceLedger", "check_authorization", "read_event", "verify_chain",
    "verify_lines",
    "ScoreVector", "SecurityScore", "aggregate_service_score", "assess", "cvss_base",
    "RecordStores", "vulnerabilities_affecting", "issue_warnings", "relevance",
]
