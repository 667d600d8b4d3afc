"""AS-level topologies: business relationships, prefix assignments, cluster membership.

A topology is a value object. Every operation returns a new topology and never
mutates its input, so topologies can be shared freely across concurrent runs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import (
    CapacityError,
    InvalidArgument,
    RelationshipConflict,
    TopologyError,
    TopologyParseError,
)

DEFAULT_LATENCY_US = 10_000  # 10 ms


class Relationship(Enum):
    CUSTOMER_TO_PROVIDER = "customer_to_provider"
    PEER_TO_PEER = "peer_to_peer"
    FULL_TRANSIT = "full_transit"


class Role(Enum):
    LEGACY = "legacy"
    CLUSTER_MEMBER = "cluster_member"


class PeerClass(Enum):
    """What a neighbor is to me: drives route preference and export policy."""

    CUSTOMER = "customer"
    PEER = "peer"
    PROVIDER = "provider"
    FULL_TRANSIT = "full_transit"


@dataclass(frozen=True, order=True)
class Prefix:
    id: str
    cidr: str


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    kind: Relationship
    latency_us: int = DEFAULT_LATENCY_US
    customer: int | None = None  # endpoint acting as customer, C2P links only
    cluster_internal: bool = False

    def __post_init__(self):
        if self.a == self.b:
            raise TopologyError(f"self-link at AS{self.a}")
        if self.a > self.b:
            raise TopologyError("link endpoints must be stored in sorted order")
        if self.kind is Relationship.CUSTOMER_TO_PROVIDER:
            if self.customer not in (self.a, self.b):
                raise TopologyError(
                    f"link {self.a}-{self.b}: customer endpoint must be one of the endpoints"
                )
        elif self.customer is not None:
            raise TopologyError(f"link {self.a}-{self.b}: only C2P links have a customer side")

    def other(self, asn: int) -> int:
        return self.b if asn == self.a else self.a

    def peer_class(self, viewer: int) -> PeerClass:
        """Classify the far endpoint of this link from `viewer`'s point of view."""
        if viewer not in (self.a, self.b):
            raise InvalidArgument(f"AS{viewer} is not an endpoint of link {self.a}-{self.b}")
        if self.kind is Relationship.PEER_TO_PEER:
            return PeerClass.PEER
        if self.kind is Relationship.FULL_TRANSIT:
            return PeerClass.FULL_TRANSIT
        return PeerClass.CUSTOMER if viewer != self.customer else PeerClass.PROVIDER


def _link_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def make_link(
    a: int,
    b: int,
    kind: Relationship,
    latency_us: int = DEFAULT_LATENCY_US,
    customer: int | None = None,
    cluster_internal: bool = False,
) -> Link:
    lo, hi = _link_key(a, b)
    return Link(lo, hi, kind, latency_us, customer, cluster_internal)


@dataclass
class Topology:
    """An AS graph with typed links, prefix originations and declared clusters."""

    roles: dict[int, Role] = field(default_factory=dict)
    links: dict[tuple[int, int], Link] = field(default_factory=dict)
    originations: dict[Prefix, int] = field(default_factory=dict)
    clusters: tuple[frozenset[int], ...] = ()

    @property
    def nodes(self) -> list[int]:
        return sorted(self.roles)

    def has_node(self, asn: int) -> bool:
        return asn in self.roles

    def link_between(self, a: int, b: int) -> Link | None:
        return self.links.get(_link_key(a, b))

    def neighbors(self, asn: int) -> list[int]:
        out = []
        for link in self.links.values():
            if asn == link.a:
                out.append(link.b)
            elif asn == link.b:
                out.append(link.a)
        return sorted(out)

    def prefixes(self) -> list[Prefix]:
        return list(self.originations)

    def cluster_of(self, asn: int) -> int | None:
        for i, members in enumerate(self.clusters):
            if asn in members:
                return i
        return None

    def copy(self) -> Topology:
        return Topology(
            roles=dict(self.roles),
            links=dict(self.links),
            originations=dict(self.originations),
            clusters=self.clusters,
        )

    def validate(self) -> None:
        for asn in self.roles:
            if asn <= 0:
                raise TopologyError(f"AS numbers must be positive, got {asn}")
        for key, link in self.links.items():
            if key != (link.a, link.b):
                raise TopologyError(f"link key {key} does not match endpoints")
            for end in (link.a, link.b):
                if end not in self.roles:
                    raise TopologyError(f"link {link.a}-{link.b} references unknown AS{end}")
        if len(self.roles) > 1 and not self._connected():
            raise TopologyError("topology is not connected")
        seen: set[int] = set()
        for members in self.clusters:
            if seen & members:
                raise TopologyError("an AS may belong to at most one cluster")
            seen |= members
            for asn in members:
                if self.roles.get(asn) is not Role.CLUSTER_MEMBER:
                    raise TopologyError(f"cluster member AS{asn} not tagged as member")
        for asn, role in self.roles.items():
            if role is Role.CLUSTER_MEMBER and asn not in seen:
                raise TopologyError(f"AS{asn} tagged member but in no cluster")
        for prefix, origin in self.originations.items():
            if origin not in self.roles:
                raise TopologyError(f"prefix {prefix.cidr} originated by unknown AS{origin}")

    def _connected(self) -> bool:
        nodes = self.nodes
        if not nodes:
            return True
        adj: dict[int, list[int]] = {n: [] for n in nodes}
        for link in self.links.values():
            adj[link.a].append(link.b)
            adj[link.b].append(link.a)
        seen = {nodes[0]}
        stack = [nodes[0]]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(nodes)


def make_clique(
    n: int, relationship: Relationship, latency_us: int = DEFAULT_LATENCY_US
) -> Topology:
    """Complete graph on ASes 1..n, every pair linked with the given relationship.

    For C2P cliques the lower-numbered AS takes the customer side of each link.
    """
    if n < 2:
        raise InvalidArgument(f"a clique needs at least 2 ASes, got {n}")
    roles = {asn: Role.LEGACY for asn in range(1, n + 1)}
    links: dict[tuple[int, int], Link] = {}
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            customer = a if relationship is Relationship.CUSTOMER_TO_PROVIDER else None
            links[(a, b)] = Link(a, b, relationship, latency_us, customer)
    topo = Topology(roles=roles, links=links)
    topo.validate()
    return topo


def parse_caida(text: str | bytes, latency_us: int = DEFAULT_LATENCY_US) -> Topology:
    """Parse the CAIDA serial-1 relationship format: ``<as1>|<as2>|<rel>`` lines.

    rel -1 means as1 is the provider of as2; rel 0 means the ASes peer.
    Comment lines start with '#'. Conflicting duplicate links are an error.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii")
    roles: dict[int, Role] = {}
    links: dict[tuple[int, int], Link] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise TopologyParseError(f"expected 'as1|as2|rel', got {line!r}", line=lineno)
        try:
            as1, as2, rel = (int(p) for p in parts)
        except ValueError:
            raise TopologyParseError(f"non-integer field in {line!r}", line=lineno) from None
        if as1 <= 0 or as2 <= 0:
            raise TopologyParseError(f"AS numbers must be positive in {line!r}", line=lineno)
        if as1 == as2:
            raise TopologyParseError(f"self-link at AS{as1}", line=lineno)
        if rel == -1:
            kind, customer = Relationship.CUSTOMER_TO_PROVIDER, as2
        elif rel == 0:
            kind, customer = Relationship.PEER_TO_PEER, None
        else:
            raise TopologyParseError(f"relationship must be -1 or 0, got {rel}", line=lineno)
        link = make_link(as1, as2, kind, latency_us, customer)
        key = (link.a, link.b)
        prior = links.get(key)
        if prior is not None and (prior.kind, prior.customer) != (link.kind, link.customer):
            raise RelationshipConflict(
                f"link {link.a}-{link.b} already declared as {prior.kind.value}", line=lineno
            )
        links[key] = link
        roles[as1] = Role.LEGACY
        roles[as2] = Role.LEGACY
    topo = Topology(roles=roles, links=links)
    topo.validate()
    return topo


def serialize_caida(topology: Topology) -> str:
    """Inverse of parse_caida for topologies expressible in the serial-1 format."""
    lines = []
    for key in sorted(topology.links):
        link = topology.links[key]
        if link.kind is Relationship.PEER_TO_PEER:
            lines.append(f"{link.a}|{link.b}|0")
        elif link.kind is Relationship.CUSTOMER_TO_PROVIDER:
            provider = link.other(link.customer)
            lines.append(f"{provider}|{link.customer}|-1")
        else:
            raise InvalidArgument(
                f"link {link.a}-{link.b}: {link.kind.value} has no serial-1 encoding"
            )
    return "\n".join(lines) + ("\n" if lines else "")


def assign_prefixes(topology: Topology, origins: list[int]) -> Topology:
    """Assign synthetic /16 prefixes out of 10.0.0.0/8 to `origins`, in order."""
    for asn in origins:
        if not topology.has_node(asn):
            raise InvalidArgument(f"cannot originate from unknown AS{asn}")
    start = len(topology.originations)
    if start + len(origins) > 256:
        raise CapacityError("the 10.0.0.0/8 pool holds at most 256 /16 prefixes")
    out = topology.copy()
    for i, asn in enumerate(origins, start=start):
        prefix = Prefix(id=f"p{i}", cidr=f"10.{i}.0.0/16")
        out.originations[prefix] = asn
    return out


def declare_cluster(topology: Topology, members: set[int]) -> Topology:
    """Tag `members` as one SDN cluster and mark links among them cluster-internal.

    Members need not be connected: disjoint sub-clusters under one controller
    are legal. An empty member set leaves the topology unchanged.
    """
    members = set(members)
    if not members:
        return topology.copy()
    for asn in members:
        if not topology.has_node(asn):
            raise InvalidArgument(f"cannot cluster unknown AS{asn}")
        if topology.cluster_of(asn) is not None:
            raise InvalidArgument(f"AS{asn} already belongs to a cluster")
    out = topology.copy()
    for asn in members:
        out.roles[asn] = Role.CLUSTER_MEMBER
    for key, link in list(out.links.items()):
        if link.a in members and link.b in members:
            out.links[key] = replace(link, cluster_internal=True)
    out.clusters = topology.clusters + (frozenset(members),)
    out.validate()
    return out


def add_node(topology: Topology, asn: int) -> Topology:
    if topology.has_node(asn):
        raise InvalidArgument(f"AS{asn} already present")
    out = topology.copy()
    out.roles[asn] = Role.LEGACY
    return out


def add_link(
    topology: Topology,
    a: int,
    b: int,
    kind: Relationship,
    latency_us: int = DEFAULT_LATENCY_US,
    customer: int | None = None,
) -> Topology:
    for end in (a, b):
        if not topology.has_node(end):
            raise InvalidArgument(f"link endpoint AS{end} unknown")
    if topology.link_between(a, b) is not None:
        raise InvalidArgument(f"link {a}-{b} already present")
    out = topology.copy()
    link = make_link(a, b, kind, latency_us, customer)
    out.links[(link.a, link.b)] = link
    out.validate()
    return out


def without_link(topology: Topology, a: int, b: int) -> Topology:
    key = _link_key(a, b)
    if key not in topology.links:
        raise InvalidArgument(f"no link {a}-{b} to remove")
    out = topology.copy()
    del out.links[key]
    out.validate()
    return out


# --- JSON serialization -----------------------------------------------------
#
# Document shape: {"nodes": [...], "links": [...], "originations": [...],
# "clusters": [...]} as described in docs/topology-format.md.


def to_json(topology: Topology) -> str:
    doc = {
        "nodes": [
            {"asn": asn, "role": topology.roles[asn].value} for asn in topology.nodes
        ],
        "links": [
            {
                "a": link.a,
                "b": link.b,
                "kind": link.kind.value,
                "latency_us": link.latency_us,
                "customer": link.customer,
                "cluster_internal": link.cluster_internal,
            }
            for key, link in sorted(topology.links.items())
        ],
        "originations": [
            {"id": prefix.id, "cidr": prefix.cidr, "origin": origin}
            for prefix, origin in topology.originations.items()
        ],
        "clusters": [sorted(members) for members in topology.clusters],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def from_json(text: str | bytes) -> Topology:
    doc = json.loads(text)
    roles = {int(n["asn"]): Role(n["role"]) for n in doc["nodes"]}
    links: dict[tuple[int, int], Link] = {}
    for entry in doc["links"]:
        link = Link(
            a=int(entry["a"]),
            b=int(entry["b"]),
            kind=Relationship(entry["kind"]),
            latency_us=int(entry["latency_us"]),
            customer=entry.get("customer"),
            cluster_internal=bool(entry.get("cluster_internal", False)),
        )
        links[(link.a, link.b)] = link
    originations = {
        Prefix(id=o["id"], cidr=o["cidr"]): int(o["origin"]) for o in doc["originations"]
    }
    clusters = tuple(frozenset(int(m) for m in c) for c in doc["clusters"])
    topo = Topology(roles=roles, links=links, originations=originations, clusters=clusters)
    topo.validate()
    return topo
