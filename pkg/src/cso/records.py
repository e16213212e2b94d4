"""Typed records held by the stores.

Every record class maps one-to-one onto the body of an exchange document:
dataclass field names are the body keys and field values stay JSON-native
(str, list, dict, numbers, None).  ``check()`` enforces the invariants that
span more than one field; per-field shape is enforced by the JSON schemas in
:mod:`cso.exchange`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from typing import Any, ClassVar

from .errors import SchemaViolation

VULN_ID = re.compile(r"^VLN-[0-9]{4}-[0-9]+$")
RIGHTS = ("read", "write", "execute")
ASSESSMENTS = ("under_investigation", "confirmed", "false_incident")


def parse_ts(value: str, field_name: str = "ts") -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    if not isinstance(value, str):
        raise SchemaViolation(field_name, "timestamp must be a string")
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise SchemaViolation(field_name, f"not an ISO-8601 timestamp: {value!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


class Record:
    """Mixin giving a dataclass its exchange-body mapping."""

    KIND: ClassVar[str]

    @classmethod
    def from_body(cls, body: dict[str, Any]):
        known = {f.name for f in fields(cls) if f.init}
        return cls(**{k: v for k, v in body.items() if k in known})

    def to_body(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.init}

    @property
    def key(self) -> str:
        return self.id

    def check(self) -> None:
        pass


# -- Incident database --------------------------------------------------------

@dataclass
class EventRecord(Record):
    KIND: ClassVar[str] = "event"

    id: str
    timestamp: str
    source: str
    actor: str
    action: str
    attributes: dict = field(default_factory=dict)

    def check(self) -> None:
        parse_ts(self.timestamp, "timestamp")


@dataclass
class IncidentRecord(Record):
    """An incident on either a resource or a data object.

    ``subject`` is ``{"type": "resource" | "data", "id": ...}`` so that data
    incidents can be recorded independently of the hosting asset.
    """

    KIND: ClassVar[str] = "incident"

    id: str
    subject: dict
    state: str
    expected_consequence: str = ""
    assessment: str = "under_investigation"
    event_ids: list = field(default_factory=list)

    @property
    def subject_type(self) -> str:
        return self.subject["type"]

    @property
    def subject_id(self) -> str:
        return self.subject["id"]


@dataclass
class AttackRecord(Record):
    KIND: ClassVar[str] = "attack"

    id: str
    initiation: str
    incident_ids: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    propagation: list = field(default_factory=list)


# -- Warning database ---------------------------------------------------------

@dataclass
class Warning(Record):
    """A routed warning.

    ``basis`` says why the recipients are concerned: they own a resource in
    the impact closure (``owner``), subscribe to one (``subscriber``), or own
    an affected data object with no known hosting resource (``data_owner``).
    ``dependency_path`` runs from the recipient's resource down to the
    at-risk resource and is empty only for ``data_owner`` warnings.
    """

    KIND: ClassVar[str] = "warning"

    id: str
    risk_ref: str
    at_risk_resource: str
    recipients: list
    basis: str = "owner"
    dependency_path: list = field(default_factory=list)
    severity: dict | None = None

    def check(self) -> None:
        if self.dependency_path:
            if self.dependency_path[-1] != self.at_risk_resource:
                raise SchemaViolation("dependency_path", "must end at at_risk_resource")
        elif self.basis != "data_owner":
            raise SchemaViolation("dependency_path", "only data_owner warnings may omit a path")


# -- User resource database ---------------------------------------------------

@dataclass
class CloudSubscription(Record):
    KIND: ClassVar[str] = "subscription"

    org: str
    service: str
    contract: str = ""
    usage_records: list = field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{self.org}|{self.service}"


@dataclass
class AccessControlPolicy(Record):
    """Rights of one subject on one data object.

    ``location_constraint`` lists allowed physical loci; a locus also admits
    anything beneath it, so ``"jp"`` allows ``"jp/tokyo/dc1"``.
    """

    KIND: ClassVar[str] = "policy"

    data_id: str
    subject: str
    rights: list = field(default_factory=list)
    location_constraint: list | None = None

    @property
    def key(self) -> str:
        return f"{self.data_id}|{self.subject}"

    def allows(self, right: str) -> bool:
        return right in self.rights

    def permits_location(self, locus: str) -> bool:
        if self.location_constraint is None:
            return True
        return any(locus == c or locus.startswith(c.rstrip("/") + "/")
                   for c in self.location_constraint)


@dataclass
class Identity(Record):
    """A user and the identities they hold.

    ``identities`` items are ``{"id", "status": "valid" | "invalid",
    "reputation": number | None}``.
    """

    KIND: ClassVar[str] = "identity"

    user_id: str
    identities: list
    registrations: list = field(default_factory=list)

    @property
    def key(self) -> str:
        return self.user_id

    @property
    def identity_ids(self) -> list[str]:
        return [i["id"] for i in self.identities]

    def check(self) -> None:
        ids = self.identity_ids
        if len(set(ids)) != len(ids):
            raise SchemaViolation("identities", "identity ids repeat")


# -- Provider resource database -----------------------------------------------

PROVIDER_SPEC_KEYS = {
    "network": ("topology", "routing"),
    "cloud_service": ("service",),
}


@dataclass
class ProviderResourceEntry(Record):
    KIND: ClassVar[str] = "provider_resource"

    id: str
    kind: str
    spec: dict
    security_policy: str = ""
    workload: dict | None = None

    def check(self) -> None:
        for key in PROVIDER_SPEC_KEYS[self.kind]:
            if key not in self.spec:
                raise SchemaViolation(f"spec.{key}", f"required for {self.kind} entries")


@dataclass
class SecurityLevelReport(Record):
    """Third-party security level report, optionally with a certificate.

    ``evaluation`` items are ``{"metric", "value", "section"}`` where the
    section separates local from cloud resources.
    """

    KIND: ClassVar[str] = "seclevel"

    id: str
    subject: str
    issuer: str
    evaluation: list = field(default_factory=list)
    certificate: dict | None = None

    def check(self) -> None:
        if self.certificate is not None:
            issued = parse_ts(self.certificate["issued_at"], "certificate.issued_at")
            expires = parse_ts(self.certificate["expires_at"], "certificate.expires_at")
            if expires <= issued:
                raise SchemaViolation("certificate.expires_at", "must be after issued_at")

    def is_stale(self, now: datetime | None = None) -> bool:
        if self.certificate is None:
            return False
        now = now or datetime.now(timezone.utc)
        return parse_ts(self.certificate["expires_at"]) <= now

    def sections(self) -> dict[str, list[dict]]:
        out: dict[str, list[dict]] = {}
        for item in self.evaluation:
            out.setdefault(item.get("section", "local"), []).append(item)
        return out


# -- Knowledge bases ----------------------------------------------------------

@dataclass
class VulnerabilityEntry(Record):
    """A known vulnerability.

    ``affected`` holds product/service references: resource ids or
    cloud-service entry ids.  ``cvss_vector`` is an optional base vector in
    short-token form used for warning severity.
    """

    KIND: ClassVar[str] = "vulnerability"

    id: str
    description: str
    kind: str
    affected: list = field(default_factory=list)
    impact_layers: list = field(default_factory=list)
    cvss_vector: str | None = None

    def check(self) -> None:
        if not VULN_ID.match(self.id):
            raise SchemaViolation("id", "expected VLN-<year>-<integer>")
        if len(set(self.impact_layers)) != len(self.impact_layers):
            raise SchemaViolation("impact_layers", "layers repeat")
        if self.cvss_vector is not None:
            from .scoring import ScoreVector

            try:
                ScoreVector.parse(self.cvss_vector)
            except ValueError as exc:
                raise SchemaViolation("cvss_vector", str(exc)) from None


@dataclass
class ThreatEntry(Record):
    """Attack knowledge (``attack``: pattern/tool/trend) or mis-use knowledge
    (``misuse``: intent benign|malicious plus description)."""

    KIND: ClassVar[str] = "threat"

    id: str
    kind: str
    attack: dict | None = None
    misuse: dict | None = None

    def check(self) -> None:
        if getattr(self, self.kind) is None:
            raise SchemaViolation(self.kind, f"required for {self.kind} threats")


@dataclass
class AssessmentRule(Record):
    """Assessment rule; ``body`` is prose or checklist items.

    Checklist items of the form ``{"setting": k, "expected": v}`` are
    evaluated automatically by :func:`cso.scoring.assess`.
    """

    KIND: ClassVar[str] = "assessment_rule"

    id: str
    body: Any
    applicability: list = field(default_factory=list)


@dataclass
class DetectionRule(Record):
    KIND: ClassVar[str] = "detection_rule"

    id: str
    body: Any
    applicability: list = field(default_factory=list)


@dataclass
class ProductVersionEntry(Record):
    KIND: ClassVar[str] = "version"

    product: str
    version: str
    patches: list = field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{self.product}|{self.version}"


@dataclass
class ConfigurationEntry(Record):
    """Known configuration of one product/service or a composition of several."""

    KIND: ClassVar[str] = "configuration"

    id: str
    targets: list
    settings: dict = field(default_factory=dict)

    @property
    def is_composite(self) -> bool:
        return len(self.targets) > 1


@dataclass
class CloudServiceEntry(Record):
    KIND: ClassVar[str] = "cloud_service"

    id: str
    provider: str
    service: str
    taxonomy_path: list = field(default_factory=list)
