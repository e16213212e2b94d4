"""Layered resources and their acyclic depends-on relation.

An edge ``dependent -> dependee`` means *dependent* is built upon (utilizes)
*dependee*.  Damage to a resource propagates to everything that reaches it
along such edges, which is what :meth:`DependencyGraph.dependents_closure`
returns.

Acyclicity is enforced on insertion.  The graph keeps a topological order
(dependents before dependees) and repairs it incrementally when an edge
contradicts it, searching only the window of the order between the two
endpoints (Pearce & Kelly's dynamic topological sort).
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass
from typing import ClassVar, Iterable, Iterator, Sequence

from .errors import CycleError, DuplicateResourceId, InvalidResource, MissingResource
from .records import Record

DEFAULT_LAYERS: tuple[str, ...] = (
    "Hardware",
    "Virtualization",
    "OperatingSystem",
    "Platform",
    "Service",
    "Data",
)

LOCI = ("local", "cloud")


@dataclass(frozen=True)
class Resource(Record):
    KIND: ClassVar[str] = "resource"

    id: str
    name: str
    layer: str
    owner_org: str
    locus: str = "local"
    provider: str | None = None

    def check(self) -> None:
        if not self.id:
            raise InvalidResource("resource id must be non-empty")
        if self.locus not in LOCI:
            raise InvalidResource(f"{self.id}: locus must be one of {LOCI}")
        if self.locus == "cloud" and not self.provider:
            raise InvalidResource(f"{self.id}: cloud resource needs a provider reference")


@dataclass(frozen=True)
class DependencyEdge(Record):
    KIND: ClassVar[str] = "dependency"

    dependent: str
    dependee: str

    @property
    def key(self) -> str:
        return f"{self.dependent}|{self.dependee}"

    def check(self) -> None:
        if self.dependent == self.dependee:
            raise CycleError(f"self-dependency on {self.dependent}")


class DependencyGraph:
    def __init__(self, layers: Sequence[str] = DEFAULT_LAYERS) -> None:
        layers = tuple(layers)
        if len(layers) < 2 or len(set(layers)) != len(layers):
            raise ValueError("need at least two distinct layers")
        self.layers = layers
        self._rank = {name: i for i, name in enumerate(layers)}
        self._resources: dict[str, Resource] = {}
        self._uses: dict[str, set[str]] = {}
        self._used_by: dict[str, set[str]] = {}
        self._by_provider: dict[str, set[str]] = {}
        self._tombstones: set[str] = set()
        self._ord: dict[str, int] = {}
        self._next_ord = 0

    # -- container protocol ------------------------------------------------

    def __len__(self) -> int:
        return len(self._resources)

    def __contains__(self, rid: object) -> bool:
        return rid in self._resources

    def __iter__(self) -> Iterator[Resource]:
        return iter(self._resources.values())

    def get(self, rid: str) -> Resource:
        try:
            return self._resources[rid]
        except KeyError:
            raise MissingResource(f"no resource {rid!r}") from None

    def edges(self) -> Iterator[DependencyEdge]:
        for dependent, dependees in self._uses.items():
            for dependee in sorted(dependees):
                yield DependencyEdge(dependent, dependee)

    def uses(self, rid: str) -> frozenset[str]:
        self.get(rid)
        return frozenset(self._uses[rid])

    def used_by(self, rid: str) -> frozenset[str]:
        self.get(rid)
        return frozenset(self._used_by[rid])

    def snapshot(self) -> DependencyGraph:
        return copy.deepcopy(self)

    def layer_rank(self, layer: str) -> int:
        return self._rank[layer]

    # -- mutation ----------------------------------------------------------

    def add_resource(self, resource: Resource) -> None:
        if resource.id in self._resources:
            raise DuplicateResourceId(resource.id)
        resource.check()
        if resource.layer not in self._rank:
            raise InvalidResource(f"{resource.id}: unknown layer {resource.layer!r}")
        self._resources[resource.id] = resource
        self._uses[resource.id] = set()
        self._used_by[resource.id] = set()
        if resource.provider:
            self._by_provider.setdefault(resource.provider, set()).add(resource.id)
        self._ord[resource.id] = self._next_ord
        self._next_ord += 1

    def tombstone(self, rid: str) -> None:
        """Retire a resource; it stays resolvable but takes no new edges."""
        self.get(rid)
        self._tombstones.add(rid)

    def is_tombstoned(self, rid: str) -> bool:
        return rid in self._tombstones

    def add_dependency(self, edge: DependencyEdge | tuple[str, str]) -> None:
        dependent, dependee = edge if isinstance(edge, tuple) else (edge.dependent, edge.dependee)
        for rid in (dependent, dependee):
            self.get(rid)
            if rid in self._tombstones:
                raise InvalidResource(f"{rid} is tombstoned")
        if dependent == dependee:
            raise CycleError(f"self-dependency on {dependent}")
        if dependee in self._uses[dependent]:
            return
        self._reorder(dependent, dependee)
        self._uses[dependent].add(dependee)
        self._used_by[dependee].add(dependent)

    def _reorder(self, x: str, y: str) -> None:
        ord_ = self._ord
        lb, ub = ord_[y], ord_[x]
        if ub < lb:
            return
        # forward from y inside the window; reaching x closes a cycle
        forward, stack = {y}, [y]
        while stack:
            n = stack.pop()
            for m in self._uses[n]:
                if m == x:
                    raise CycleError(f"{x} -> {y} would close a dependency cycle")
                if m not in forward and ord_[m] < ub:
                    forward.add(m)
                    stack.append(m)
        backward, stack = {x}, [x]
        while stack:
            n = stack.pop()
            for m in self._used_by[n]:
                if m not in backward and ord_[m] > lb:
                    backward.add(m)
                    stack.append(m)
        moved = sorted(backward, key=ord_.__getitem__) + sorted(forward, key=ord_.__getitem__)
        slots = sorted(ord_[n] for n in moved)
        for n, slot in zip(moved, slots):
            ord_[n] = slot

    # -- queries -----------------------------------------------------------

    def _walk(self, start: str, adjacency: dict[str, set[str]]) -> set[str]:
        self.get(start)
        seen = {start}
        queue = deque([start])
        while queue:
            for m in adjacency[queue.popleft()]:
                if m not in seen:
                    seen.add(m)
                    queue.append(m)
        return seen

    def dependents_closure(self, rid: str) -> set[str]:
        """``rid`` plus every resource that directly or indirectly utilizes it."""
        return self._walk(rid, self._used_by)

    def dependees_closure(self, rid: str) -> set[str]:
        """``rid`` plus every resource it directly or indirectly utilizes."""
        return self._walk(rid, self._uses)

    def impact_layers(self, rid: str) -> set[str]:
        return {self._resources[r].layer for r in self.dependents_closure(rid)}

    def sorted_layers(self, layers: Iterable[str]) -> list[str]:
        return sorted(layers, key=self._rank.__getitem__)

    def dependency_path(self, start: str, target: str) -> list[str] | None:
        """Shortest utilization chain ``[start, ..., target]``.

        Ties are broken by resource id so the result is deterministic.
        """
        self.get(start)
        self.get(target)
        parent: dict[str, str | None] = {start: None}
        queue = deque([start])
        while queue:
            n = queue.popleft()
            if n == target:
                path = []
                cur: str | None = n
                while cur is not None:
                    path.append(cur)
                    cur = parent[cur]
                return path[::-1]
            for m in sorted(self._uses[n]):
                if m not in parent:
                    parent[m] = n
                    queue.append(m)
        return None

    def resolve_ref(self, ref: str) -> set[str]:
        """Resources a product/service reference denotes.

        A reference matches a resource by id, or by the cloud-service entry
        the resource is provided by.
        """
        hits = set(self._by_provider.get(ref, ()))
        if ref in self._resources:
            hits.add(ref)
        return hits

    def topological_order(self) -> list[str]:
        """Dependents before dependees."""
        return sorted(self._resources, key=self._ord.__getitem__)

    def affected_orgs(self, rid: str, subscriptions: Iterable = ()) -> set[str]:
        """Owners of the dependents closure plus orgs subscribed into it.

        ``subscriptions`` items need ``org`` and ``service`` attributes; a
        subscription counts when its service resolves (see
        :meth:`resolve_ref`) to a closure member.
        """
        closure = self.dependents_closure(rid)
        orgs = {self._resources[r].owner_org for r in closure}
        for sub in subscriptions:
            if self.resolve_ref(sub.service) & closure:
                orgs.add(sub.org)
        return orgs
