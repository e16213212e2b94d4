"""Data provenance: a hash-chained manipulation history per data object.

Each data object has its own chain.  Event ``n`` stores the digest of event
``n - 1`` (an all-zero digest for the first event) and its own digest over
``(seq, data_id, actor, operation, payload, prev_digest, digest_alg)``, so
altering any stored event breaks verification at or before that event.

Placement changes (physical location moves under a fixed logical location)
and policy changes are logged in the same chain as content manipulations.

Payload conventions understood by the ledger:

``create``
    ``owner_org``, ``logical_location``, ``physical_location``,
    ``host_resource`` (all optional); ``epoch_start: true`` marks data whose
    earlier history is unknown.
``placement_change``
    ``logical_location``, ``old_physical``, ``new_physical``, ``timestamp``,
    optional ``host_resource``.
``policy_change``
    ``subject``, ``rights``, optional ``location_constraint``.
"""

from __future__ import annotations

import hashlib
import uuid
from dataclasses import dataclass, field, replace
from typing import Any, ClassVar, Iterable

from .canonical import canonical_bytes
from .errors import (
    AppendAfterDelete,
    CreateOnNonEmpty,
    InvariantViolation,
    MissingCreate,
    SchemaViolation,
    SequenceGap,
    UnknownDataId,
)
from .records import AccessControlPolicy, EventRecord, IncidentRecord, Record, parse_ts, utc_now

OPERATIONS = ("create", "read", "write", "delete", "policy_change", "placement_change")

# operation -> right the actor must hold
REQUIRED_RIGHT = {
    "read": "read",
    "write": "write",
    "delete": "write",
    "policy_change": "write",
}


def zero_digest(alg: str = "sha256") -> str:
    return "0" * (2 * hashlib.new(alg).digest_size)


@dataclass(frozen=True)
class ProvenanceEvent(Record):
    KIND: ClassVar[str] = "provenance"

    seq: int
    data_id: str
    actor: str
    operation: str
    payload: dict = field(default_factory=dict)
    prev_digest: str = ""
    digest: str = ""
    digest_alg: str = "sha256"

    @property
    def key(self) -> str:
        return f"{self.data_id}|{self.seq}"

    def check(self) -> None:
        if self.digest_alg not in hashlib.algorithms_available:
            raise SchemaViolation("digest_alg", f"unknown digest {self.digest_alg!r}")
        if self.operation == "placement_change":
            check_placement(self.payload)

    def compute_digest(self) -> str:
        material = canonical_bytes({
            "seq": self.seq,
            "data_id": self.data_id,
            "actor": self.actor,
            "operation": self.operation,
            "payload": self.payload,
            "prev_digest": self.prev_digest,
            "digest_alg": self.digest_alg,
        })
        return hashlib.new(self.digest_alg, material).hexdigest()


@dataclass(frozen=True)
class PlacementChange:
    data_id: str
    logical_location: str
    old_physical: str
    new_physical: str
    timestamp: str

    def to_payload(self) -> dict:
        return {
            "logical_location": self.logical_location,
            "old_physical": self.old_physical,
            "new_physical": self.new_physical,
            "timestamp": self.timestamp,
        }


def check_placement(payload: dict) -> None:
    for key in ("logical_location", "old_physical", "new_physical", "timestamp"):
        if not isinstance(payload.get(key), str):
            raise SchemaViolation(f"payload.{key}", "required for placement_change")
    if payload["old_physical"] == payload["new_physical"]:
        raise SchemaViolation("payload.new_physical", "placement did not change")
    parse_ts(payload["timestamp"], "payload.timestamp")


@dataclass(frozen=True)
class ChainStatus:
    ok: bool
    first_bad_seq: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(chain: Iterable[ProvenanceEvent]) -> ChainStatus:
    """Recompute every digest and link; report the earliest broken position.

    Positions are numbered like sequence numbers, so a chain whose ``k``-th
    event is damaged in any field reports a seq no greater than ``k``.
    """
    prev: str | None = None
    data_id: str | None = None
    for pos, ev in enumerate(chain):
        try:
            expected_prev = zero_digest(ev.digest_alg) if pos == 0 else prev
            if ev.seq != pos:
                return ChainStatus(False, pos, f"seq {ev.seq} at position {pos}")
            if pos == 0:
                data_id = ev.data_id
                if ev.operation != "create":
                    return ChainStatus(False, pos, "chain does not start with create")
            elif ev.data_id != data_id:
                return ChainStatus(False, pos, "data id changes mid-chain")
            if ev.prev_digest != expected_prev:
                return ChainStatus(False, pos, "prev_digest does not link")
            if ev.digest != ev.compute_digest():
                return ChainStatus(False, pos, "digest does not recompute")
        except (TypeError, ValueError, AttributeError) as exc:
            return ChainStatus(False, pos, f"malformed event: {exc}")
        prev = ev.digest
    return ChainStatus(True)


def read_event(line: bytes | str) -> ProvenanceEvent:
    """Decode one stored event line.

    Besides parse and schema errors, a line that is not byte-identical to
    its canonical encoding (say ``1.0`` rewritten as ``1e0``) is rejected,
    so no edit to a stored event can go unnoticed.
    """
    from .exchange import parse_body

    raw = line.encode("utf-8") if isinstance(line, str) else bytes(line)
    raw = raw.rstrip(b"\r\n")
    ev = parse_body("provenance", raw)
    if canonical_bytes(ev.to_body()) != raw:
        raise SchemaViolation("provenance", "event line is not in canonical form")
    return ev


def verify_lines(lines: Iterable[bytes | str]) -> ChainStatus:
    """Verify a chain stored one canonical event body per line."""
    events = []
    for pos, line in enumerate(lines):
        try:
            events.append(read_event(line))
        except Exception as exc:  # any unreadable line is damage at its position
            prefix = verify_chain(events)
            return prefix if not prefix.ok else ChainStatus(False, pos, f"unreadable event: {exc}")
    return verify_chain(events)


def chain_append(chain: list[ProvenanceEvent], draft: ProvenanceEvent) -> ProvenanceEvent:
    """Link ``draft`` onto ``chain`` (in place) and return the sealed event."""
    if draft.operation not in OPERATIONS:
        raise SchemaViolation("operation", f"unknown operation {draft.operation!r}")
    if chain:
        last = chain[-1]
        if last.operation == "delete":
            raise AppendAfterDelete(f"{draft.data_id} was deleted at seq {last.seq}")
        if draft.operation == "create":
            raise CreateOnNonEmpty(f"{draft.data_id} already exists")
        if draft.seq != last.seq + 1:
            raise SequenceGap(f"expected seq {last.seq + 1}, got {draft.seq}")
        if draft.data_id != last.data_id:
            raise InvariantViolation("event belongs to another data id")
        prev = last.digest
    else:
        if draft.seq != 0:
            raise SequenceGap(f"first event must have seq 0, got {draft.seq}")
        if draft.operation != "create":
            raise MissingCreate(f"first event for {draft.data_id} must be create")
        prev = zero_digest(draft.digest_alg)
    draft.check()
    linked = replace(draft, prev_digest=prev, digest="")
    sealed = replace(linked, digest=linked.compute_digest())
    chain.append(sealed)
    return sealed


@dataclass(frozen=True)
class Authorization:
    allowed: bool
    reason: str = ""
    incident: IncidentRecord | None = None

    def __bool__(self) -> bool:
        return self.allowed


def check_authorization(
    event: ProvenanceEvent,
    policies: Iterable[AccessControlPolicy],
    owner: str | None = None,
) -> Authorization:
    """Decide whether ``event`` respects the data's access-control policies.

    The data's creator (``owner``) holds every right.  Other actors need the
    right matching the operation.  A placement change must land inside every
    location constraint set on the data, whoever performs it.
    """
    mine = [p for p in policies if p.data_id == event.data_id]
    op = event.operation
    if op == "create":
        return Authorization(True)
    if op == "placement_change":
        target = event.payload.get("new_physical", "")
        for p in mine:
            if not p.permits_location(target):
                return Authorization(
                    False, f"placement to {target!r} violates location constraint of {p.subject}"
                )
        return Authorization(True)
    right = REQUIRED_RIGHT[op]
    if owner is not None and event.actor == owner:
        return Authorization(True)
    for p in mine:
        if p.subject == event.actor and p.allows(right):
            return Authorization(True)
    return Authorization(False, f"{event.actor} lacks {right} right on {event.data_id}")


@dataclass
class DataState:
    owner: str
    owner_org: str | None = None
    logical_location: str | None = None
    physical_location: str | None = None
    host_resource: str | None = None
    deleted: bool = False


class ProvenanceLedger:
    """Per-data chains plus the effective access policies they govern.

    ``sink``, when given, is a :class:`cso.stores.RecordStores`; sealed events,
    policy updates and violation incidents are written through it.
    Violations are kept in :attr:`incidents` either way.
    """

    def __init__(self, *, digest_alg: str = "sha256", read_logging: bool = False, sink=None) -> None:
        hashlib.new(digest_alg)
        self.digest_alg = digest_alg
        self.read_logging = read_logging
        self.sink = sink
        self.chains: dict[str, list[ProvenanceEvent]] = {}
        self.state: dict[str, DataState] = {}
        self.policies: dict[str, dict[str, AccessControlPolicy]] = {}
        self.incidents: list[IncidentRecord] = []

    @classmethod
    def replay(cls, events: Iterable[ProvenanceEvent], policies: Iterable[AccessControlPolicy] = (),
               **kwargs) -> ProvenanceLedger:
        """Rebuild from stored events without recomputing digests."""
        ledger = cls(**kwargs)
        for pol in policies:
            ledger.policies.setdefault(pol.data_id, {})[pol.subject] = pol
        for ev in events:  # log order, so a forged seq cannot be sorted into place
            ledger.chains.setdefault(ev.data_id, []).append(ev)
            ledger._apply(ev, persist=False)
        return ledger

    # -- queries -----------------------------------------------------------

    def data_ids(self) -> list[str]:
        return sorted(self.chains)

    def history(self, data_id: str) -> list[ProvenanceEvent]:
        try:
            return list(self.chains[data_id])
        except KeyError:
            raise UnknownDataId(f"no provenance for {data_id!r}") from None

    def verify(self, data_id: str | None = None) -> dict[str, ChainStatus]:
        ids = [data_id] if data_id is not None else self.data_ids()
        return {d: verify_chain(self.history(d)) for d in ids}

    def policies_for(self, data_id: str) -> list[AccessControlPolicy]:
        return list(self.policies.get(data_id, {}).values())

    def hosting(self) -> dict[str, str]:
        """data id -> resource currently hosting it, where known."""
        return {d: s.host_resource for d, s in self.state.items() if s.host_resource and not s.deleted}

    def owners(self) -> dict[str, str]:
        """data id -> owning organization, where declared at create time."""
        return {d: s.owner_org for d, s in self.state.items() if s.owner_org}

    # -- mutation ----------------------------------------------------------

    def draft(self, data_id: str, actor: str, operation: str, payload: dict | None = None) -> ProvenanceEvent:
        chain = self.chains.get(data_id, [])
        seq = chain[-1].seq + 1 if chain else 0
        return ProvenanceEvent(seq, data_id, actor, operation, dict(payload or {}),
                               digest_alg=self.digest_alg)

    def append(self, event: ProvenanceEvent) -> ProvenanceEvent:
        """Seal and link an event.  No authorization check is made here."""
        state = self.state.get(event.data_id)
        if state is not None and state.deleted:
            incident = self._violation(event, "manipulation attempted after delete")
            raise AppendAfterDelete(f"{event.data_id} was deleted; nothing may follow", incident)
        if event.operation == "placement_change" and state is not None:
            logical = state.logical_location
            if logical is not None and event.payload.get("logical_location") != logical:
                raise InvariantViolation("placement change must keep the logical location")
            if state.physical_location is not None and event.payload.get("old_physical") != state.physical_location:
                raise InvariantViolation(
                    f"old_physical {event.payload.get('old_physical')!r} is not the current "
                    f"placement {state.physical_location!r}"
                )
        if event.operation == "policy_change":
            _policy_from_payload(event)
        chain = self.chains.setdefault(event.data_id, [])
        try:
            sealed = chain_append(chain, event)
        except Exception:
            if not chain:
                del self.chains[event.data_id]
            raise
        self._apply(sealed, persist=True)
        return sealed

    def record(self, data_id: str, actor: str, operation: str,
               payload: dict | None = None) -> tuple[ProvenanceEvent | None, Authorization]:
        """Authorize, log, and return ``(event, authorization)``.

        The manipulation is logged even when unauthorized, since it has
        happened; the violation is reported through an incident.  Reads are
        only logged when read logging is enabled.
        """
        if operation not in OPERATIONS:
            raise SchemaViolation("operation", f"unknown operation {operation!r}")
        event = self.draft(data_id, actor, operation, payload)
        if data_id not in self.chains and operation != "create":
            raise UnknownDataId(f"no provenance for {data_id!r}")
        state = self.state.get(data_id)
        auth = check_authorization(event, self.policies_for(data_id), state.owner if state else None)
        if operation == "read" and not self.read_logging:
            sealed = None
        else:
            sealed = self.append(event)
        if not auth.allowed:
            auth = Authorization(False, auth.reason, self._violation(event, auth.reason))
        return sealed, auth

    def _apply(self, ev: ProvenanceEvent, *, persist: bool) -> None:
        p = ev.payload
        if ev.operation == "create":
            self.state[ev.data_id] = DataState(
                owner=ev.actor,
                owner_org=p.get("owner_org"),
                logical_location=p.get("logical_location"),
                physical_location=p.get("physical_location"),
                host_resource=p.get("host_resource"),
            )
        state = self.state.get(ev.data_id)
        if state is None:
            return
        if ev.operation == "placement_change":
            state.physical_location = p.get("new_physical")
            if state.logical_location is None:
                state.logical_location = p.get("logical_location")
            state.host_resource = p.get("host_resource", state.host_resource)
        elif ev.operation == "delete":
            state.deleted = True
        elif ev.operation == "policy_change":
            try:
                pol = _policy_from_payload(ev)
            except SchemaViolation:
                pol = None
            if pol is not None:
                self.policies.setdefault(ev.data_id, {})[pol.subject] = pol
                if persist and self.sink is not None:
                    self.sink.put_record(pol, replace=True, entity="Administrator")
        if persist and self.sink is not None:
            self.sink.put_record(ev, entity="ResponseTeam")

    def _violation(self, event: ProvenanceEvent, reason: str) -> IncidentRecord:
        tag = uuid.uuid4().hex[:12]
        ts = utc_now()
        evt = EventRecord(
            id=f"EVT-PROV-{tag}",
            timestamp=ts,
            source=event.data_id,
            actor=event.actor,
            action=event.operation,
            attributes={"seq": event.seq, "reason": reason},
        )
        incident = IncidentRecord(
            id=f"INC-PROV-{tag}",
            subject={"type": "data", "id": event.data_id},
            state=f"data ownership rights violation: {reason}",
            expected_consequence="loss of confidentiality, integrity or availability of owner data",
            assessment="confirmed",
            event_ids=[evt.id],
        )
        self.incidents.append(incident)
        if self.sink is not None:
            self.sink.put_record(evt, entity="ResponseTeam")
            self.sink.put_record(incident, entity="ResponseTeam")
        return incident


def _policy_from_payload(ev: ProvenanceEvent) -> AccessControlPolicy:
    p = ev.payload
    subject, rights = p.get("subject"), p.get("rights")
    if not isinstance(subject, str) or not isinstance(rights, list):
        raise SchemaViolation("payload", "policy_change needs subject and rights")
    bad = [r for r in rights if r not in ("read", "write", "execute")]
    if bad:
        raise SchemaViolation("payload.rights", f"unknown rights {bad}")
    return AccessControlPolicy(ev.data_id, subject, list(rights), p.get("location_constraint"))
