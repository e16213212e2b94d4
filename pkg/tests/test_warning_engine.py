import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cso.errors import UnresolvedTarget
from cso.exchange import envelope_for, parse_record, serialize_record
from cso.graph import DependencyEdge, DependencyGraph, Resource
from cso.ontology import StoreKind, classify_record
from cso.records import CloudSubscription, IncidentRecord, VulnerabilityEntry
from cso.scoring import SecurityScore
from cso.stores import RecordStores
from cso.warning_engine import issue_and_store, issue_warnings, justified, relevance, warning_id

from oracles import random_dag, reach_by_path_extension, shortest_path_len


def chain():
    g = DependencyGraph()
    g.add_resource(Resource("D", "d", "Data", "orgA"))
    g.add_resource(Resource("S", "s", "Service", "orgS"))
    g.add_resource(Resource("P", "p", "Platform", "orgP"))
    g.add_dependency(("D", "S"))
    g.add_dependency(("S", "P"))
    return g


def vuln(affected, **kw):
    return VulnerabilityEntry("VLN-2024-100", "flaw", "code", affected=affected, **kw)


def test_indirect_owner_gets_path():
    ws = {w.recipients[0]: w for w in issue_warnings(vuln(["P"]), chain())}
    assert set(ws) == {"orgA", "orgS", "orgP"}
    assert ws["orgA"].dependency_path == ["D", "S", "P"]
    assert ws["orgA"].basis == "owner"
    assert ws["orgP"].dependency_path == ["P"]


def test_isolated_resource_single_warning():
    g = DependencyGraph()
    g.add_resource(Resource("X", "x", "Service", "orgB"))
    [w] = issue_warnings(vuln(["X"]), g)
    assert w.recipients == ["orgB"] and w.dependency_path == ["X"]
    assert w.id == warning_id("VLN-2024-100", "orgB")


def test_false_incident_yields_nothing():
    inc = IncidentRecord("I1", {"type": "resource", "id": "P"}, "", assessment="false_incident")
    assert issue_warnings(inc, chain()) == []


def test_unresolved_target():
    with pytest.raises(UnresolvedTarget):
        issue_warnings(vuln(["nowhere"]), chain())
    inc = IncidentRecord("I2", {"type": "data", "id": "doc"}, "")
    with pytest.raises(UnresolvedTarget):
        issue_warnings(inc, chain())


def test_subscription_only_indirect_user():
    g = chain()
    g.add_resource(Resource("MAIL", "mail", "Service", "acme", "cloud", "CSE-MAIL"))
    g.add_dependency(("MAIL", "P"))
    subs = [CloudSubscription("orgZ", "CSE-MAIL")]
    ws = {w.recipients[0]: w for w in issue_warnings(vuln(["P"]), g, subs)}
    assert ws["orgZ"].basis == "subscriber"
    assert ws["orgZ"].dependency_path == ["MAIL", "P"]
    assert justified(ws["orgZ"], g, subs)
    assert not justified(ws["orgZ"], g, [])


def test_owner_basis_preferred_on_equal_paths():
    g = DependencyGraph()
    g.add_resource(Resource("X", "x", "Service", "orgB", "cloud", "CSE-X"))
    [w] = issue_warnings(vuln(["X"]), g, [CloudSubscription("orgB", "CSE-X")])
    assert w.basis == "owner"


def test_data_incident_routes_through_hosting_resource():
    inc = IncidentRecord("I3", {"type": "data", "id": "doc"}, "leak", assessment="confirmed")
    ws = issue_warnings(inc, chain(), hosting={"doc": "S"}, data_owners={"doc": "orgA"})
    assert {w.recipients[0] for w in ws} == {"orgA", "orgS"}
    assert all(w.at_risk_resource == "S" and w.basis == "owner" for w in ws)


def test_data_incident_also_warns_separate_data_owner():
    inc = IncidentRecord("I3", {"type": "data", "id": "doc"}, "leak", assessment="confirmed")
    ws = {w.recipients[0]: w for w in
          issue_warnings(inc, chain(), hosting={"doc": "S"}, data_owners={"doc": "orgQ"})}
    assert list(ws) == ["orgA", "orgQ", "orgS"]
    assert ws["orgQ"].basis == "data_owner" and ws["orgQ"].dependency_path == []
    assert ws["orgQ"].at_risk_resource == "doc"
    assert all(justified(w, chain(), []) for w in ws.values())


def test_data_only_incident_warns_owner():
    inc = IncidentRecord("I4", {"type": "data", "id": "doc"}, "leak", assessment="confirmed")
    [w] = issue_warnings(inc, chain(), data_owners={"doc": "orgQ"})
    assert w.recipients == ["orgQ"] and w.basis == "data_owner"
    assert w.dependency_path == [] and w.at_risk_resource == "doc"
    assert justified(w, chain(), [])


def test_severity_from_vector_or_scores():
    ws = issue_warnings(vuln(["P"], cvss_vector="AV:N/AC:L/Au:N/C:C/I:C/A:C"), chain())
    assert all(w.severity == {"value": 10.0, "method": "cvss2_base"} for w in ws)
    inc = IncidentRecord("I5", {"type": "resource", "id": "P"}, "")
    ws = issue_warnings(inc, chain(), scores={"P": SecurityScore(6.2, "aggregate_max")})
    assert all(w.severity == {"value": 6.2, "method": "aggregate_max"} for w in ws)
    assert all(w.severity is None for w in issue_warnings(vuln(["P"]), chain()))


def test_relevance():
    [w] = [w for w in issue_warnings(vuln(["P"]), chain()) if w.recipients == ["orgA"]]
    assert relevance(w, "orgA")
    assert not relevance(w, "orgB")
    back = parse_record(serialize_record(envelope_for(w, "ResponseTeam"))).record()
    assert relevance(back, "orgA") and not relevance(back, "orgB")
    assert back == w


def test_warnings_route_to_warning_db():
    for w in issue_warnings(vuln(["P"]), chain()):
        assert classify_record(w) is StoreKind.WARNING_DB


def test_issue_and_store_dedupes_and_refreshes(tmp_path):
    stores = RecordStores(tmp_path)
    for rid, layer, org in [("D", "Data", "orgA"), ("S", "Service", "orgS"), ("P", "Platform", "orgP")]:
        stores.put_record(Resource(rid, rid, layer, org))
    stores.put_record(DependencyEdge("D", "S"))
    stores.put_record(DependencyEdge("S", "P"))
    v = vuln(["P"])
    stores.put_record(v)
    issue_and_store(stores, v)
    issue_and_store(stores, v)
    assert len(stores.query(StoreKind.WARNING_DB)) == 3
    lines = (tmp_path / "WarningDB.csolog").read_bytes().count(b"\n")
    assert lines == 3
    issue_and_store(stores, v, scores={"P": SecurityScore(8.0)})
    live = stores.query(StoreKind.WARNING_DB)
    assert len(live) == 3 and all(w.severity["value"] == 8.0 for w in live)
    assert len(RecordStores(tmp_path).query(StoreKind.WARNING_DB)) == 3


# -- soundness and completeness against brute-force closures ------------------------

def oracle_recipients(nodes, edges, owner, subs, provider, targets):
    reach = reach_by_path_extension(nodes, edges)
    hit = {v for v in nodes if reach[v] & set(targets)}
    orgs = {owner[v] for v in hit}
    orgs |= {s.org for s in subs if any(provider.get(v) == s.service for v in hit)}
    return orgs


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_routing_sound_and_complete(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 25)
    nodes, edges = random_dag(rng, n, rng.randint(0, 3 * n))
    orgs = [f"org{i}" for i in range(5)]
    owner = {v: rng.choice(orgs) for v in nodes}
    provider = {v: f"CSE-{v}" for v in nodes if rng.random() < 0.3}
    g = DependencyGraph()
    for v in nodes:
        locus = "cloud" if v in provider else "local"
        g.add_resource(Resource(v, v, "Service", owner[v], locus, provider.get(v)))
    for e in edges:
        g.add_dependency(e)
    subs = [CloudSubscription(f"sub{i}", rng.choice(list(provider.values())))
            for i in range(rng.randint(0, 4))] if provider else []
    targets = rng.sample(nodes, rng.randint(1, min(2, n)))
    risk = vuln(targets)

    ws = issue_warnings(risk, g, subs)
    got = [w.recipients[0] for w in ws]
    assert len(got) == len(set(got))
    assert set(got) == oracle_recipients(nodes, edges, owner, subs, provider, targets)
    for w in ws:
        assert justified(w, g, subs)
        best = min(shortest_path_len(edges, r.id, t) or 10**9
                   for t in targets for r in g
                   if owner[r.id] == w.recipients[0]
                   or any(s.org == w.recipients[0] and s.service == provider.get(r.id) for s in subs))
        assert len(w.dependency_path) == best
