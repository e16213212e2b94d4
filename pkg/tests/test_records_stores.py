import random
from datetime import datetime, timezone

import pytest

from cso.errors import InvariantViolation, MissingReference, StoreMismatch
from cso.exchange import envelope_for
from cso.graph import DependencyEdge, DependencyGraph, Resource
from cso.ontology import StoreKind
from cso.records import (
    AccessControlPolicy,
    CloudServiceEntry,
    CloudSubscription,
    EventRecord,
    Identity,
    IncidentRecord,
    SecurityLevelReport,
    VulnerabilityEntry,
    Warning,
)
from cso.stores import RecordStores, vulnerabilities_affecting

from oracles import random_dag, reach_by_path_extension, shortest_path_len

TS = "2024-05-01T12:00:00Z"


def event(i, ts=TS, source="host1"):
    return EventRecord(f"E{i}", ts, source, "root", "login")


def incident(iid, subject_type="resource", subject_id="WEB", assessment="confirmed"):
    return IncidentRecord(iid, {"type": subject_type, "id": subject_id}, "defaced",
                          assessment=assessment, event_ids=["E1"])


def chain_stores(state_dir=None):
    stores = RecordStores(state_dir)
    for rid, layer, org in [("D", "Data", "orgA"), ("S", "Service", "orgS"), ("P", "Platform", "orgP")]:
        stores.put_record(Resource(rid, rid, layer, org))
    stores.put_record(DependencyEdge("D", "S"))
    stores.put_record(DependencyEdge("S", "P"))
    return stores


# -- put / query ------------------------------------------------------------------

def test_put_event_returns_id():
    stores = RecordStores()
    assert stores.put(StoreKind.INCIDENT_DB, event(1)) == "E1"
    assert stores.query(StoreKind.INCIDENT_DB) == [event(1)]


def test_put_into_wrong_store():
    with pytest.raises(StoreMismatch):
        RecordStores().put(StoreKind.WARNING_DB, event(1))


def test_put_empty_vulnerability_id():
    with pytest.raises(InvariantViolation):
        RecordStores().put(StoreKind.VULNERABILITY_KB, VulnerabilityEntry("", "x", "code"))


def test_query_empty_store():
    assert RecordStores().query(StoreKind.THREAT_KB) == []


def test_false_incidents_are_retained():
    stores = RecordStores()
    stores.put_record(event(1))
    stores.put_record(incident("I1", assessment="false_incident"))
    stores.put_record(incident("I2"))
    hits = stores.query(StoreKind.INCIDENT_DB, lambda r: getattr(r, "assessment", None) == "false_incident")
    assert [r.id for r in hits] == ["I1"]


def test_query_is_append_only():
    stores = RecordStores()
    stores.put_record(event(1))
    first = stores.query(StoreKind.INCIDENT_DB)
    stores.put_record(event(2))
    second = stores.query(StoreKind.INCIDENT_DB)
    assert second[: len(first)] == first and len(second) == len(first) + 1


def test_duplicate_key_rejected_without_replace():
    stores = RecordStores()
    stores.put_record(event(1))
    with pytest.raises(InvariantViolation):
        stores.put_record(event(1))


def test_event_time_monotone_per_source():
    stores = RecordStores()
    stores.put_record(event(1, "2024-05-01T12:00:00Z"))
    stores.put_record(event(2, "2024-05-01T11:00:00Z", source="host2"))
    with pytest.raises(InvariantViolation):
        stores.put_record(event(3, "2024-05-01T11:59:59Z"))
    stores.put_record(event(4, "2024-05-01T12:00:00Z"))


def test_identity_ids_globally_unique():
    stores = RecordStores()
    stores.put_record(Identity("alice", [{"id": "alice@idp", "status": "valid", "reputation": 0.9}]))
    with pytest.raises(InvariantViolation):
        stores.put_record(Identity("bob", [{"id": "alice@idp", "status": "valid"}]))


def test_cloud_service_pairs_unique():
    stores = RecordStores()
    stores.put_record(CloudServiceEntry("CSE-1", "acme", "mail", ["SaaS", "Mail"]))
    with pytest.raises(InvariantViolation):
        stores.put_record(CloudServiceEntry("CSE-2", "acme", "mail", ["SaaS"]))


def test_policy_one_per_data_subject():
    stores = RecordStores()
    stores.put_record(AccessControlPolicy("doc", "bob", ["read"]))
    with pytest.raises(InvariantViolation):
        stores.put_record(AccessControlPolicy("doc", "bob", ["write"]))
    stores.put_record(AccessControlPolicy("doc", "bob", ["write"]), replace=True)
    assert [p.rights for p in stores.policies()] == [["write"]]


def test_vulnerability_layers_must_exist():
    with pytest.raises(InvariantViolation):
        RecordStores().put_record(VulnerabilityEntry("VLN-2024-1", "x", "code", impact_layers=["Kernel"]))


def test_dependency_endpoints_must_exist():
    stores = RecordStores()
    stores.put_record(Resource("A", "a", "Service", "o"))
    with pytest.raises(InvariantViolation):
        stores.put_record(DependencyEdge("A", "B"))


def test_certificate_staleness():
    rep = SecurityLevelReport("SL1", "acme", "auditor", certificate={
        "issuer": "auditor", "scope": "mail", "issued_at": "2023-01-01T00:00:00Z",
        "expires_at": "2024-01-01T00:00:00Z"})
    assert rep.is_stale(datetime(2024, 6, 1, tzinfo=timezone.utc))
    assert not rep.is_stale(datetime(2023, 6, 1, tzinfo=timezone.utc))
    with pytest.raises(InvariantViolation):
        RecordStores().put_record(SecurityLevelReport("SL2", "acme", "auditor", certificate={
            "issuer": "a", "scope": "", "issued_at": "2024-01-01T00:00:00Z",
            "expires_at": "2023-01-01T00:00:00Z"}))


# -- decoupling, tombstones, persistence ---------------------------------------------

def test_data_subject_incident_stores_like_resource_subject(tmp_path):
    stores = RecordStores(tmp_path)
    on_data = incident("I-DATA", "data", "customer-db")
    on_res = incident("I-RES", "resource", "WEB")
    stores.put_record(on_data, entity="ResponseTeam")
    stores.put_record(on_res, entity="ResponseTeam")
    again = RecordStores(tmp_path)
    assert again.get(StoreKind.INCIDENT_DB, "I-DATA") == on_data
    assert again.get(StoreKind.INCIDENT_DB, "I-RES") == on_res
    assert again.get(StoreKind.INCIDENT_DB, "I-DATA").subject_type == "data"


def test_replay_restores_everything(tmp_path):
    stores = chain_stores(tmp_path)
    stores.put_record(event(1))
    stores.put_record(CloudSubscription("orgZ", "CSE-1"))
    again = RecordStores(tmp_path)
    assert again.query(StoreKind.INCIDENT_DB) == stores.query(StoreKind.INCIDENT_DB)
    assert again.graph.dependents_closure("P") == {"D", "S", "P"}
    assert again.subscriptions() == [CloudSubscription("orgZ", "CSE-1")]
    assert (tmp_path / "UserResourceDB.csolog").exists()


def test_tombstone_is_appended_not_erased(tmp_path):
    stores = RecordStores(tmp_path)
    w1 = Warning("WRN:V:o", "V", "P", ["o"], "owner", ["P"])
    stores.put_record(w1)
    size = (tmp_path / "WarningDB.csolog").stat().st_size
    stores.tombstone(StoreKind.WARNING_DB, w1.key, "superseded")
    assert stores.query(StoreKind.WARNING_DB) == []
    assert stores.query(StoreKind.WARNING_DB, include_retired=True) == [w1]
    data = (tmp_path / "WarningDB.csolog").read_bytes()
    assert len(data) > size and data.count(b"\n") == 2
    assert RecordStores(tmp_path).query(StoreKind.WARNING_DB) == []
    with pytest.raises(MissingReference):
        stores.tombstone(StoreKind.WARNING_DB, w1.key)


def test_tombstone_envelope_via_put():
    stores = RecordStores()
    w1 = Warning("WRN:V:o", "V", "P", ["o"], "owner", ["P"])
    stores.put_record(w1)
    env = envelope_for(w1, "ResponseTeam")
    env.extensions["tombstone"] = True
    stores.put(StoreKind.WARNING_DB, env)
    assert stores.query(StoreKind.WARNING_DB) == []


def test_resources_are_retired_not_removed():
    stores = chain_stores()
    with pytest.raises(InvariantViolation):
        stores.tombstone(StoreKind.USER_RESOURCE_DB, "P")
    stores.retire_resource("P")
    assert "P" in stores.graph and stores.graph.is_tombstoned("P")


def test_corrupt_log_lines_are_skipped(tmp_path):
    stores = RecordStores(tmp_path)
    stores.put_record(event(1))
    with open(tmp_path / "IncidentDB.csolog", "ab") as fh:
        fh.write(b"{garbage\n")
    again = RecordStores(tmp_path)
    assert [r.id for r in again.query(StoreKind.INCIDENT_DB)] == ["E1"]
    assert again.corrupt and again.corrupt[0][:2] == ("IncidentDB", 2)


# -- reference checking ----------------------------------------------------------------

def test_verify_refs_lists_dangling_ids():
    stores = chain_stores()
    stores.put_record(event(1))
    stores.put_record(incident("I1", "resource", "P"))
    stores.put_record(IncidentRecord("I2", {"type": "resource", "id": "GHOST"}, "", event_ids=["E9"]))
    stores.put_record(CloudSubscription("orgZ", "CSE-NOPE"))
    stores.put_record(VulnerabilityEntry("VLN-2024-1", "x", "code", affected=["P", "nowhere"]))
    missing = {(u.record, u.field, u.ref) for u in stores.verify_refs()}
    assert missing == {
        ("I2", "event_ids", "E9"),
        ("I2", "subject", "GHOST"),
        ("orgZ|CSE-NOPE", "service", "CSE-NOPE"),
        ("VLN-2024-1", "affected", "nowhere"),
    }


def test_verify_refs_clean():
    stores = chain_stores()
    stores.put_record(CloudServiceEntry("CSE-1", "acme", "mail", ["SaaS"]))
    stores.put_record(CloudSubscription("orgZ", "CSE-1"))
    assert stores.verify_refs() == []


# -- vulnerabilities reaching an organization -----------------------------------------

def test_vulnerability_reaches_indirect_owner():
    stores = chain_stores()
    vuln = VulnerabilityEntry("VLN-2024-7", "x", "code", affected=["P"])
    stores.put_record(vuln)
    edges = [("D", "S"), ("S", "P")]
    assert shortest_path_len(edges, "D", "P") == 3
    assert stores.vulnerabilities_affecting("orgA") == [(vuln, ["D", "S", "P"])]


def test_vulnerability_without_path_excluded():
    stores = chain_stores()
    stores.put_record(Resource("X", "x", "Platform", "orgX"))
    stores.put_record(VulnerabilityEntry("VLN-2024-8", "x", "code", affected=["X"]))
    assert stores.vulnerabilities_affecting("orgA") == []
    assert [v.id for v, _ in stores.vulnerabilities_affecting("orgX")] == ["VLN-2024-8"]


def test_org_without_resources():
    stores = chain_stores()
    stores.put_record(VulnerabilityEntry("VLN-2024-9", "x", "code", affected=["P"]))
    assert stores.vulnerabilities_affecting("nobody") == []


def test_vulnerability_reaches_subscriber_through_provider_ref():
    stores = chain_stores()
    stores.put_record(Resource("MAIL", "mail", "Service", "acme", "cloud", "CSE-MAIL"))
    stores.put_record(DependencyEdge("MAIL", "P"))
    stores.put_record(CloudSubscription("orgZ", "CSE-MAIL"))
    stores.put_record(VulnerabilityEntry("VLN-2024-10", "x", "code", affected=["P"]))
    [(vuln, path)] = stores.vulnerabilities_affecting("orgZ")
    assert path == ["MAIL", "P"]


def test_vulnerabilities_affecting_matches_closure_oracle():
    rng = random.Random(3)
    nodes, edges = random_dag(rng, 40, 80)
    g = DependencyGraph()
    orgs = ["o0", "o1", "o2", "o3"]
    for v in nodes:
        g.add_resource(Resource(v, v, "Service", rng.choice(orgs)))
    for e in edges:
        g.add_dependency(e)
    reach = reach_by_path_extension(nodes, edges)
    vulns = [VulnerabilityEntry(f"VLN-2024-{i}", "", "code", affected=[rng.choice(nodes)]) for i in range(10)]
    for org in orgs:
        owned = {r.id for r in g if r.owner_org == org}
        hits = vulnerabilities_affecting(g, org, [], vulns)
        expected = [v for v in vulns if any(v.affected[0] in reach[o] for o in owned)]
        assert [v for v, _ in hits] == expected
        for v, path in hits:
            target = v.affected[0]
            best = min(shortest_path_len(edges, o, target) or 10**9 for o in owned)
            assert path[0] in owned and path[-1] == target and len(path) == best
