"""The cybersecurity-operations ontology as fixed, queryable data.

Three operation domains, seven functional entity kinds, and ten leaf stores
(four databases plus the six sub-knowledge-bases of the three knowledge
bases).  Every store has exactly one domain, a non-empty set of entity kinds
that manipulate it and the list of information standards mapped onto it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Mapping

from .errors import UnknownRecordKind


class OperationDomain(str, enum.Enum):
    IT_ASSET_MANAGEMENT = "ITAssetManagement"
    INCIDENT_HANDLING = "IncidentHandling"
    KNOWLEDGE_ACCUMULATION = "KnowledgeAccumulation"


class EntityKind(str, enum.Enum):
    ADMINISTRATOR = "Administrator"
    IT_INFRASTRUCTURE_PROVIDER = "ITInfrastructureProvider"
    RESPONSE_TEAM = "ResponseTeam"
    COORDINATOR = "Coordinator"
    RESEARCHER = "Researcher"
    PRODUCT_SERVICE_PROVIDER = "ProductServiceProvider"
    REGISTRAR = "Registrar"


class StoreGroup(str, enum.Enum):
    """Knowledge bases that are split into two leaf stores each."""

    CYBER_RISK_KB = "CyberRiskKB"
    COUNTERMEASURE_KB = "CountermeasureKB"
    PRODUCT_SERVICE_KB = "ProductServiceKB"


class StoreKind(str, enum.Enum):
    INCIDENT_DB = "IncidentDB"
    WARNING_DB = "WarningDB"
    USER_RESOURCE_DB = "UserResourceDB"
    PROVIDER_RESOURCE_DB = "ProviderResourceDB"
    VULNERABILITY_KB = "VulnerabilityKB"
    THREAT_KB = "ThreatKB"
    ASSESSMENT_KB = "AssessmentKB"
    DETECTION_PROTECTION_KB = "DetectionProtectionKB"
    VERSION_KB = "VersionKB"
    CONFIGURATION_KB = "ConfigurationKB"

    @property
    def parent(self) -> StoreGroup | None:
        return _PARENT.get(self)


class StandardId(str, enum.Enum):
    ARF = "ARF"
    CRF = "CRF"
    CVSS = "CVSS"
    CWSS = "CWSS"
    CEE = "CEE"
    IODEF = "IODEF"
    CVE = "CVE"
    CWE = "CWE"
    CAPEC = "CAPEC"
    MAEC = "MAEC"
    OVAL = "OVAL"
    XCCDF = "XCCDF"
    CPE = "CPE"
    CCE = "CCE"


_S = StoreKind
_E = EntityKind
_D = OperationDomain
_T = StandardId

_PARENT = {
    _S.VULNERABILITY_KB: StoreGroup.CYBER_RISK_KB,
    _S.THREAT_KB: StoreGroup.CYBER_RISK_KB,
    _S.ASSESSMENT_KB: StoreGroup.COUNTERMEASURE_KB,
    _S.DETECTION_PROTECTION_KB: StoreGroup.COUNTERMEASURE_KB,
    _S.VERSION_KB: StoreGroup.PRODUCT_SERVICE_KB,
    _S.CONFIGURATION_KB: StoreGroup.PRODUCT_SERVICE_KB,
}

_KB_MANIPULATORS = frozenset({_E.RESEARCHER, _E.PRODUCT_SERVICE_PROVIDER, _E.REGISTRAR})


@dataclass(frozen=True)
class OntologySchema:
    """Immutable store -> (domain, manipulators, standards) relations."""

    domain_of: Mapping[StoreKind, OperationDomain]
    manipulators: Mapping[StoreKind, frozenset]
    standards: Mapping[StoreKind, tuple]

    def __post_init__(self) -> None:
        for table in (self.domain_of, self.manipulators, self.standards):
            missing = set(StoreKind) - set(table)
            if missing:
                raise ValueError(f"schema is not total, missing {sorted(missing)}")
        for store, who in self.manipulators.items():
            if not who:
                raise ValueError(f"{store.value} has no manipulating entity")
        for store, group in _PARENT.items():
            siblings = {self.domain_of[s] for s, g in _PARENT.items() if g is group}
            if len(siblings) != 1:
                raise ValueError(f"sub-stores of {group.value} disagree on domain")

    def to_document(self) -> dict[str, Any]:
        """Plain-data form used by ``schema export``."""
        stores = []
        for store in StoreKind:
            stores.append({
                "store": store.value,
                "parent": store.parent.value if store.parent else None,
                "domain": self.domain_of[store].value,
                "manipulators": sorted(e.value for e in self.manipulators[store]),
                "standards": [s.value for s in self.standards[store]],
            })
        return {
            "domains": [d.value for d in OperationDomain],
            "entities": [e.value for e in EntityKind],
            "standards": [s.value for s in StandardId],
            "stores": stores,
            "record_kinds": dict(KIND_HOME_TOKENS),
        }


SCHEMA = OntologySchema(
    domain_of=MappingProxyType({
        _S.USER_RESOURCE_DB: _D.IT_ASSET_MANAGEMENT,
        _S.PROVIDER_RESOURCE_DB: _D.IT_ASSET_MANAGEMENT,
        _S.INCIDENT_DB: _D.INCIDENT_HANDLING,
        _S.WARNING_DB: _D.INCIDENT_HANDLING,
        _S.VULNERABILITY_KB: _D.KNOWLEDGE_ACCUMULATION,
        _S.THREAT_KB: _D.KNOWLEDGE_ACCUMULATION,
        _S.ASSESSMENT_KB: _D.KNOWLEDGE_ACCUMULATION,
        _S.DETECTION_PROTECTION_KB: _D.KNOWLEDGE_ACCUMULATION,
        _S.VERSION_KB: _D.KNOWLEDGE_ACCUMULATION,
        _S.CONFIGURATION_KB: _D.KNOWLEDGE_ACCUMULATION,
    }),
    manipulators=MappingProxyType({
        _S.INCIDENT_DB: frozenset({_E.RESPONSE_TEAM}),
        _S.WARNING_DB: frozenset({_E.RESPONSE_TEAM, _E.COORDINATOR}),
        _S.USER_RESOURCE_DB: frozenset({_E.ADMINISTRATOR}),
        _S.PROVIDER_RESOURCE_DB: frozenset({_E.IT_INFRASTRUCTURE_PROVIDER}),
        _S.VULNERABILITY_KB: _KB_MANIPULATORS,
        _S.THREAT_KB: _KB_MANIPULATORS,
        _S.ASSESSMENT_KB: _KB_MANIPULATORS,
        _S.DETECTION_PROTECTION_KB: _KB_MANIPULATORS,
        _S.VERSION_KB: _KB_MANIPULATORS,
        _S.CONFIGURATION_KB: _KB_MANIPULATORS,
    }),
    standards=MappingProxyType({
        _S.USER_RESOURCE_DB: (_T.ARF, _T.CRF, _T.CVSS, _T.CWSS),
        _S.PROVIDER_RESOURCE_DB: (),
        _S.INCIDENT_DB: (_T.CEE, _T.IODEF),
        _S.WARNING_DB: (),
        _S.VULNERABILITY_KB: (_T.CVE, _T.CWE),
        _S.THREAT_KB: (_T.CAPEC, _T.MAEC),
        _S.ASSESSMENT_KB: (_T.CVSS, _T.CWSS, _T.OVAL, _T.XCCDF),
        _S.DETECTION_PROTECTION_KB: (),
        _S.VERSION_KB: (_T.CPE,),
        _S.CONFIGURATION_KB: (_T.CCE,),
    }),
)


# record kind token -> home store
KIND_HOME: Mapping[str, StoreKind] = MappingProxyType({
    "event": _S.INCIDENT_DB,
    "incident": _S.INCIDENT_DB,
    "attack": _S.INCIDENT_DB,
    "provenance": _S.INCIDENT_DB,
    "warning": _S.WARNING_DB,
    "subscription": _S.USER_RESOURCE_DB,
    "policy": _S.USER_RESOURCE_DB,
    "identity": _S.USER_RESOURCE_DB,
    "resource": _S.USER_RESOURCE_DB,
    "dependency": _S.USER_RESOURCE_DB,
    "provider_resource": _S.PROVIDER_RESOURCE_DB,
    "seclevel": _S.PROVIDER_RESOURCE_DB,
    "vulnerability": _S.VULNERABILITY_KB,
    "threat": _S.THREAT_KB,
    "assessment_rule": _S.ASSESSMENT_KB,
    "detection_rule": _S.DETECTION_PROTECTION_KB,
    "version": _S.VERSION_KB,
    "cloud_service": _S.VERSION_KB,
    "configuration": _S.CONFIGURATION_KB,
})

KIND_HOME_TOKENS = tuple((k, v.value) for k, v in KIND_HOME.items())
RECORD_KINDS = tuple(KIND_HOME)


def domain_of(store: StoreKind) -> OperationDomain:
    return SCHEMA.domain_of[StoreKind(store)]


def standards_for(store: StoreKind) -> list[StandardId]:
    return list(SCHEMA.standards[StoreKind(store)])


def manipulators_of(store: StoreKind) -> frozenset[EntityKind]:
    return SCHEMA.manipulators[StoreKind(store)]


def stores_in(group: StoreGroup) -> list[StoreKind]:
    return [s for s in StoreKind if s.parent is group]


def classify_record(record: Any) -> StoreKind:
    """Home store of an envelope, a typed record, or a bare kind token."""
    if isinstance(record, str):
        kind = record
    else:
        # typed records name their kind in KIND; some also carry a ``kind`` field
        kind = getattr(type(record), "KIND", None) or getattr(record, "kind", None)
    try:
        return KIND_HOME[kind]
    except (KeyError, TypeError):
        raise UnknownRecordKind(kind) from None
