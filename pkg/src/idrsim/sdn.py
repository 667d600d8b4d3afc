"""Centralized routing controller for a cluster of ASes that keep their AS identity.

The controller maintains two graphs. The switch graph is the physical picture:
cluster members and the cluster-internal links among them (it may be
disconnected; each connected component is a sub-cluster). Per destination
prefix it derives a routing graph whose vertices are the members, one vertex
per admissible externally learned route, and a virtual destination; shortest
paths on that graph decide every member's egress at once.

Loop avoidance differs from BGP's: an external route offered at a border
member is inadmissible when its AS path contains any member of that border's
own connected component (forwarding along it would re-enter the component and
bounce back). Routes through members of *other* components stay admissible:
they realize legacy detours that bridge sub-clusters, and since no internal
edge crosses components, the members named in such a path can never sit
upstream of it inside the routing graph.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from itertools import count

from .bgp import BgpMessage, Emit, MsgKind, RouteAdvert, export_allowed
from .errors import InvalidArgument, ProtocolError
from .topo import DEFAULT_LATENCY_US, PeerClass, Prefix, Topology

Egress = tuple  # ("member", asn) | ("external", asn) | ("local",)


@dataclass
class SwitchGraph:
    """Physical cluster picture: members, internal links, and border sessions."""

    nodes: frozenset[int]
    edges: dict[tuple[int, int], int]  # (a, b) sorted -> latency_us
    border_sessions: dict[tuple[int, int], PeerClass]  # (member, external) -> class

    def components(self) -> list[frozenset[int]]:
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        seen: set[int] = set()
        comps = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            comp = {start}
            stack = [start]
            while stack:
                for nxt in adj[stack.pop()]:
                    if nxt not in comp:
                        comp.add(nxt)
                        stack.append(nxt)
            seen |= comp
            comps.append(frozenset(comp))
        return comps


def build_switch_graph(topology: Topology, cluster: int = 0) -> SwitchGraph:
    """Restrict the topology to one declared cluster's internal links and borders."""
    if cluster >= len(topology.clusters) or not topology.clusters[cluster]:
        raise InvalidArgument("topology has no such (non-empty) cluster")
    members = topology.clusters[cluster]
    edges: dict[tuple[int, int], int] = {}
    borders: dict[tuple[int, int], PeerClass] = {}
    for key, link in topology.links.items():
        a_in, b_in = link.a in members, link.b in members
        if a_in and b_in:
            edges[key] = link.latency_us
        elif a_in:
            borders[(link.a, link.b)] = link.peer_class(link.a)
        elif b_in:
            borders[(link.b, link.a)] = link.peer_class(link.b)
    return SwitchGraph(nodes=frozenset(members), edges=edges, border_sessions=borders)


@dataclass(frozen=True)
class ExtVertex:
    """One admissible externally learned route hanging off a border member."""

    border: int
    route: RouteAdvert
    weight: int


@dataclass
class AsTopologyGraph:
    """Per-prefix routing graph: members + external-route vertices + virtual destination."""

    prefix: Prefix
    members: tuple[int, ...]
    edges: dict[tuple[int, int], int]  # internal member-member edges with weight
    ext_vertices: tuple[ExtVertex, ...]
    origin_members: tuple[int, ...]  # weight-0 connection to the destination


def transform(
    switch_graph: SwitchGraph,
    prefix: Prefix,
    external_routes: list[tuple[int, RouteAdvert]],
    originating_member: int | None = None,
    latency_weighted: bool = False,
) -> AsTopologyGraph:
    """Build the routing graph for one prefix from the current switch graph.

    Internal edges weigh one hop each (or their latency); an external route
    weighs the length of its AS path, making controller choices comparable to
    BGP's path-length criterion. Inadmissible routes (AS path through a member
    of the receiving border's own component) are dropped here.
    """
    comp_of: dict[int, int] = {}
    for i, comp in enumerate(switch_graph.components()):
        for m in comp:
            comp_of[m] = i
    admissible: list[ExtVertex] = []
    for border, route in sorted(
        external_routes, key=lambda br: (br[0], br[1].next_hop, br[1].as_path)
    ):
        comp = comp_of[border]
        if any(comp_of.get(asn) == comp for asn in route.as_path):
            continue
        if latency_weighted:
            weight = len(route.as_path) * DEFAULT_LATENCY_US
        else:
            weight = len(route.as_path)
        admissible.append(ExtVertex(border, route, weight))
    edges = {
        key: (lat if latency_weighted else 1) for key, lat in switch_graph.edges.items()
    }
    origins = (originating_member,) if originating_member is not None else ()
    return AsTopologyGraph(
        prefix=prefix,
        members=tuple(sorted(switch_graph.nodes)),
        edges=edges,
        ext_vertices=tuple(admissible),
        origin_members=origins,
    )


@dataclass(frozen=True)
class MemberRoute:
    """A member's chosen way to the destination: next hop plus the full AS-level path."""

    egress: Egress
    as_path: tuple[int, ...]
    cost: int
    tail: RouteAdvert | None  # the external route realizing the path, if any


def compute_paths(graph: AsTopologyGraph) -> dict[int, MemberRoute | None]:
    """Single-source shortest paths from the virtual destination, per member.

    Ties on cost break toward the lexicographically smallest full AS sequence,
    which makes the result (and therefore every flow table) deterministic and
    internally consistent: the label order is preserved when a path is extended
    by prepending the next member upstream.
    """
    adj: dict[int, list[tuple[int, int]]] = {m: [] for m in graph.members}
    for (a, b), w in graph.edges.items():
        adj[a].append((b, w))
        adj[b].append((a, w))

    heap: list[tuple[int, tuple[int, ...], int, int, tuple]] = []
    ticket = count()
    for m in graph.origin_members:
        heapq.heappush(heap, (0, (m,), next(ticket), m, ("local",)))
    for vertex in graph.ext_vertices:
        path = (vertex.border,) + vertex.route.as_path
        entry = (vertex.weight, path, next(ticket), vertex.border, ("external", vertex.route))
        heapq.heappush(heap, entry)

    routes: dict[int, MemberRoute | None] = {m: None for m in graph.members}
    done: set[int] = set()
    while heap:
        cost, path, _, member, choice = heapq.heappop(heap)
        if member in done:
            continue
        done.add(member)
        if choice[0] == "member":
            tail = routes[choice[1]].tail
            egress: Egress = ("member", choice[1])
        elif choice[0] == "external":
            tail = choice[1]
            egress = ("external", choice[1].next_hop)
        else:
            tail = None
            egress = ("local",)
        routes[member] = MemberRoute(egress=egress, as_path=path, cost=cost, tail=tail)
        for nxt, w in adj[member]:
            if nxt not in done:
                heapq.heappush(
                    heap, (cost + w, (nxt,) + path, next(ticket), nxt, ("member", member))
                )
    return routes


def brute_force_paths(graph: AsTopologyGraph) -> dict[int, MemberRoute | None]:
    """Independent oracle: enumerate all simple internal paths to every exit.

    Only suitable for small graphs; used to cross-check compute_paths.
    """
    adj: dict[int, list[tuple[int, int]]] = {m: [] for m in graph.members}
    for (a, b), w in graph.edges.items():
        adj[a].append((b, w))
        adj[b].append((a, w))
    exits: dict[int, list[tuple[int, RouteAdvert | None, Egress]]] = {
        m: [] for m in graph.members
    }
    for m in graph.origin_members:
        exits[m].append((0, None, ("local",)))
    for v in graph.ext_vertices:
        exits[v.border].append((v.weight, v.route, ("external", v.route.next_hop)))

    best: dict[int, MemberRoute | None] = {m: None for m in graph.members}

    def consider(member: int, cost: int, path: tuple[int, ...], egress: Egress, tail):
        cur = best[member]
        if cur is None or (cost, path) < (cur.cost, cur.as_path):
            best[member] = MemberRoute(egress=egress, as_path=path, cost=cost, tail=tail)

    def walk(member: int, visited: tuple[int, ...], cost: int):
        for exit_cost, tail, egress in exits[member]:
            total = cost + exit_cost
            tail_path = tail.as_path if tail is not None else ()
            full = visited + tail_path
            first = visited[0]
            first_egress: Egress
            if len(visited) > 1:
                first_egress = ("member", visited[1])
            else:
                first_egress = egress
            consider(first, total, full, first_egress, tail)
        for nxt, w in adj[member]:
            if nxt not in visited:
                walk_from_extension(visited + (nxt,), cost + w)

    def walk_from_extension(visited: tuple[int, ...], cost: int):
        walk(visited[-1], visited, cost)

    for start in graph.members:
        walk(start, (start,), 0)
    return best


@dataclass(frozen=True)
class FibDelta:
    member: int
    prefix: Prefix
    old: Egress | None
    new: Egress | None


def install(
    flow_table: dict[int, dict[Prefix, Egress]],
    prefix: Prefix,
    paths: dict[int, MemberRoute | None],
) -> list[FibDelta]:
    """Replace the per-member entries for one prefix atomically; report the deltas."""
    deltas: list[FibDelta] = []
    for member in sorted(paths):
        table = flow_table.setdefault(member, {})
        old = table.get(prefix)
        route = paths[member]
        new = route.egress if route is not None else None
        if new == old:
            continue
        if new is None:
            del table[prefix]
        else:
            table[prefix] = new
        deltas.append(FibDelta(member, prefix, old, new))
    return deltas


def emit_announcements(
    paths: dict[int, MemberRoute | None],
    border_sessions: dict[tuple[int, int], PeerClass],
    prev_emitted: dict[tuple[int, int, Prefix], tuple[int, ...]],
    prefix: Prefix,
) -> list[BgpMessage]:
    """Relay each member's chosen route to its legacy neighbors, deltas only.

    The announced AS path is the member sequence of the internal path plus the
    selected external tail, so every traversed member keeps its AS identity and
    the receiver's ordinary loop check stays sound. Announcements are withheld
    when the receiver already appears in the path (split horizon) or when
    valley-free policy forbids the export for that session's relationship.
    """
    messages: list[BgpMessage] = []
    for member, external in sorted(border_sessions):
        session_class = border_sessions[(member, external)]
        route = paths.get(member)
        desired: tuple[int, ...] | None = None
        if route is not None:
            learned = route.tail.learned_from if route.tail is not None else None
            if external not in route.as_path and export_allowed(learned, session_class):
                desired = route.as_path
        key = (member, external, prefix)
        prev = prev_emitted.get(key)
        if desired == prev:
            continue
        if desired is None:
            del prev_emitted[key]
            messages.append(BgpMessage(MsgKind.WITHDRAW, prefix, None, member, external))
        else:
            prev_emitted[key] = desired
            messages.append(BgpMessage(MsgKind.UPDATE, prefix, desired, member, external))
    return messages


# --- controller state machine -------------------------------------------------


@dataclass(frozen=True)
class ArmRecompute:
    cluster: int
    deadline_us: int


@dataclass(frozen=True)
class Recomputed:
    cluster: int
    prefixes: tuple[Prefix, ...]


@dataclass
class ControllerConfig:
    delta_us: int = 200_000  # batching window for external input
    latency_weighted: bool = False


class Controller:
    """Logically centralized route computation for one declared cluster.

    External BGP input lands in the controller's adj-in immediately but only
    marks the prefix dirty; one recomputation per armed window covers all dirty
    prefixes, recompiles flow tables, and re-announces deltas at the borders.
    """

    def __init__(
        self,
        cluster: int,
        topology: Topology,
        config: ControllerConfig | None = None,
    ):
        self.cluster = cluster
        self.config = config or ControllerConfig()
        self.members = topology.clusters[cluster]
        base = build_switch_graph(topology, cluster)
        self._edges = dict(base.edges)
        self._borders = dict(base.border_sessions)
        self.adj_in: dict[tuple[int, int, Prefix], RouteAdvert] = {}
        self.originated: dict[Prefix, int] = {}
        self.flow: dict[int, dict[Prefix, Egress]] = {m: {} for m in self.members}
        self.prev_emitted: dict[tuple[int, int, Prefix], tuple[int, ...]] = {}
        self.dirty: set[Prefix] = set()
        self.deadline: int | None = None

    def is_member(self, asn: int) -> bool:
        return asn in self.members

    def switch_graph(self) -> SwitchGraph:
        return SwitchGraph(
            nodes=frozenset(self.members),
            edges=dict(self._edges),
            border_sessions=dict(self._borders),
        )

    def egress(self, member: int, prefix: Prefix) -> Egress | None:
        return self.flow.get(member, {}).get(prefix)

    def known_prefixes(self) -> set[Prefix]:
        known = set(self.originated)
        known.update(p for (_, _, p) in self.adj_in)
        known.update(p for (_, _, p) in self.prev_emitted)
        for table in self.flow.values():
            known.update(table)
        return known

    # -- dirty tracking ---------------------------------------------------------

    def _arm(self, now: int) -> list:
        if not self.dirty or self.deadline is not None:
            return []
        self.deadline = now + self.config.delta_us
        return [ArmRecompute(self.cluster, self.deadline)]

    # -- external protocol input --------------------------------------------------

    def on_external_message(self, msg: BgpMessage, now: int) -> list:
        session = (msg.receiver, msg.sender)
        if session not in self._borders:
            raise ProtocolError(
                f"controller {self.cluster} has no border session {session}"
            )
        key = (msg.receiver, msg.sender, msg.prefix)
        if msg.kind is MsgKind.UPDATE:
            self.adj_in[key] = RouteAdvert(
                msg.prefix, msg.as_path, msg.sender, self._borders[session]
            )
        else:
            self.adj_in.pop(key, None)
        self.dirty.add(msg.prefix)
        return self._arm(now)

    # -- cluster-originated prefixes ----------------------------------------------

    def originate(self, member: int, prefix: Prefix, now: int) -> list:
        if self.originated.get(prefix) == member:
            return []
        self.originated[prefix] = member
        self.dirty.add(prefix)
        return self._arm(now)

    def withdraw_origin(self, member: int, prefix: Prefix, now: int) -> list:
        if self.originated.get(prefix) != member:
            raise InvalidArgument(
                f"member AS{member} never originated {prefix.cidr}, cannot withdraw"
            )
        del self.originated[prefix]
        self.dirty.add(prefix)
        return self._arm(now)

    # -- topology changes -----------------------------------------------------------

    def on_internal_link_down(self, a: int, b: int, now: int) -> list:
        key = (a, b) if a < b else (b, a)
        self._edges.pop(key, None)
        self.dirty |= self.known_prefixes()
        return self._arm(now)

    def on_internal_link_up(self, a: int, b: int, latency_us: int, now: int) -> list:
        key = (a, b) if a < b else (b, a)
        self._edges[key] = latency_us
        self.dirty |= self.known_prefixes()
        return self._arm(now)

    def on_border_down(self, member: int, external: int, now: int) -> list:
        self._borders.pop((member, external), None)
        flushed = {p for (m, e, p) in self.adj_in if (m, e) == (member, external)}
        for p in flushed:
            del self.adj_in[(member, external, p)]
        for key in [k for k in self.prev_emitted if (k[0], k[1]) == (member, external)]:
            del self.prev_emitted[key]
        self.dirty |= flushed
        return self._arm(now)

    def on_border_up(self, member: int, external: int, peer_class: PeerClass, now: int) -> list:
        self._borders[(member, external)] = peer_class
        self.dirty |= self.known_prefixes()
        return self._arm(now)

    # -- batched recomputation ---------------------------------------------------------

    def on_recompute(self, deadline: int, now: int) -> list:
        if self.deadline != deadline:
            return []  # stale timer
        self.deadline = None
        prefixes = tuple(sorted(self.dirty))
        self.dirty.clear()
        effects: list = [Recomputed(self.cluster, prefixes)]
        sg = self.switch_graph()
        for prefix in prefixes:
            external = [
                (m, route)
                for (m, e, p), route in self.adj_in.items()
                if p == prefix
            ]
            graph = transform(
                sg,
                prefix,
                external,
                originating_member=self.originated.get(prefix),
                latency_weighted=self.config.latency_weighted,
            )
            paths = compute_paths(graph)
            effects.extend(install(self.flow, prefix, paths))
            for message in emit_announcements(
                paths, self._borders, self.prev_emitted, prefix
            ):
                effects.append(Emit(message))
        return effects
