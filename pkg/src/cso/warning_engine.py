"""Turn risks into warnings routed to every direct and indirect user.

A risk (a vulnerability, or an incident that is not a false alarm) sits on
one or more resources.  Every organization owning or subscribing to a
resource whose dependents closure contains an at-risk resource gets exactly
one warning, carrying the shortest utilization chain that proves why.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from .errors import UnresolvedTarget
from .graph import DependencyGraph
from .ontology import StoreKind
from .records import CloudSubscription, IncidentRecord, VulnerabilityEntry, Warning
from .scoring import SecurityScore, cvss_base
from .stores import RecordStores, next_hops, walk


def warning_id(risk_id: str, org: str) -> str:
    return f"WRN:{risk_id}:{org}"


def risk_targets(
    risk: VulnerabilityEntry | IncidentRecord,
    graph: DependencyGraph,
    hosting: Mapping[str, str],
) -> list[str]:
    if isinstance(risk, VulnerabilityEntry):
        hits: set[str] = set()
        for ref in risk.affected:
            hits |= graph.resolve_ref(ref)
        return sorted(hits)
    if risk.subject_type == "resource":
        return [risk.subject_id] if risk.subject_id in graph else []
    host = hosting.get(risk.subject_id)
    return [host] if host in graph else []


def _severity(risk, target: str, scores: Mapping[str, SecurityScore]) -> dict | None:
    if isinstance(risk, VulnerabilityEntry) and risk.cvss_vector:
        return cvss_base(risk.cvss_vector).to_dict()
    score = scores.get(target)
    return score.to_dict() if score is not None else None


def issue_warnings(
    risk: VulnerabilityEntry | IncidentRecord,
    graph: DependencyGraph,
    subscriptions: Iterable[CloudSubscription] = (),
    *,
    hosting: Mapping[str, str] | None = None,
    data_owners: Mapping[str, str] | None = None,
    scores: Mapping[str, SecurityScore] | None = None,
) -> list[Warning]:
    """One warning per affected organization, sorted by organization.

    ``hosting`` maps data ids to the resource holding them; ``data_owners``
    maps data ids to the owning organization.  The owner of the subject of a
    data incident is always warned, with no path unless it is also reached
    through the hosting resource; with no known host it is the only recipient.
    """
    hosting = hosting or {}
    data_owners = data_owners or {}
    scores = scores or {}
    if isinstance(risk, IncidentRecord) and risk.assessment == "false_incident":
        return []
    subscriptions = list(subscriptions)
    targets = risk_targets(risk, graph, hosting)

    data_owner = None
    if isinstance(risk, IncidentRecord) and risk.subject_type == "data":
        data_owner = data_owners.get(risk.subject_id)
    if not targets:
        if data_owner:
            return [_data_owner_warning(risk, data_owner)]
        raise UnresolvedTarget(f"{risk.id}: no referenced resource resolves")

    # org -> (path length, basis rank, path, basis, target)
    best: dict[str, tuple] = {}

    def offer(org: str, path: list[str], basis: str, target: str) -> None:
        cand = (len(path), basis != "owner", path, basis, target)
        if org not in best or cand[:3] < best[org][:3]:
            best[org] = cand

    for target in targets:
        hops = next_hops(graph, target)
        for rid in hops:
            offer(graph.get(rid).owner_org, walk(hops, rid), "owner", target)
        for sub in subscriptions:
            for rid in sorted(graph.resolve_ref(sub.service) & hops.keys()):
                offer(sub.org, walk(hops, rid), "subscriber", target)

    warnings = []
    for org in sorted(best):
        _, _, path, basis, target = best[org]
        warnings.append(Warning(
            id=warning_id(risk.id, org),
            risk_ref=risk.id,
            at_risk_resource=target,
            recipients=[org],
            basis=basis,
            dependency_path=path,
            severity=_severity(risk, target, scores),
        ))
    if data_owner and data_owner not in best:
        warnings.append(_data_owner_warning(risk, data_owner))
        warnings.sort(key=lambda w: w.recipients[0])
    return warnings


def _data_owner_warning(risk: IncidentRecord, owner: str) -> Warning:
    return Warning(
        id=warning_id(risk.id, owner),
        risk_ref=risk.id,
        at_risk_resource=risk.subject_id,
        recipients=[owner],
        basis="data_owner",
    )


def relevance(warning: Warning, org: str) -> bool:
    """Whether ``warning`` concerns ``org``; needs nothing beyond the warning."""
    return org in warning.recipients


def justified(warning: Warning, graph: DependencyGraph, subscriptions: Iterable[CloudSubscription]) -> bool:
    """Check that each recipient is backed by ownership or subscription along the path."""
    if warning.basis == "data_owner":
        return not warning.dependency_path
    path = warning.dependency_path
    if not path or path[-1] != warning.at_risk_resource or any(r not in graph for r in path):
        return False
    if any(b not in graph.uses(a) for a, b in zip(path, path[1:])):
        return False
    start = path[0]
    for org in warning.recipients:
        if warning.basis == "owner" and graph.get(start).owner_org == org:
            continue
        if warning.basis == "subscriber" and any(
            sub.org == org and start in graph.resolve_ref(sub.service) for sub in subscriptions
        ):
            continue
        return False
    return True


def find_risk(stores: RecordStores, risk_id: str) -> VulnerabilityEntry | IncidentRecord | None:
    return stores.find(risk_id, ("vulnerability", "incident"))


def warnings_for(stores: RecordStores, risk: VulnerabilityEntry | IncidentRecord,
                 scores: Mapping[str, SecurityScore] | None = None) -> list[Warning]:
    ledger = stores.ledger()
    return issue_warnings(
        risk, stores.graph, stores.subscriptions(),
        hosting=ledger.hosting(), data_owners=ledger.owners(), scores=scores,
    )


def issue_and_store(stores: RecordStores, risk: VulnerabilityEntry | IncidentRecord, *,
                    entity: str = "ResponseTeam",
                    scores: Mapping[str, SecurityScore] | None = None) -> list[Warning]:
    """Issue warnings into WarningDB.

    A warning already stored for the same (risk, org) is left alone when
    unchanged and superseded (tombstone, then reissue) when it differs, for
    example after a severity refresh.
    """
    issued = warnings_for(stores, risk, scores)
    for w in issued:
        try:
            current = stores.get(StoreKind.WARNING_DB, w.key)
        except LookupError:
            current = None
        if current == w:
            continue
        stores.put(StoreKind.WARNING_DB, w, entity=entity, replace=current is not None)
    return issued
