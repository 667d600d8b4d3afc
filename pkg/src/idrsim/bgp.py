"""Per-AS path-vector BGP engine: RIB stages, decision process, policy export, MRAI pacing.

Each legacy AS runs one `BgpNode`. Node methods are driven by the simulation
event loop and return effect objects (messages to emit, timers to arm, RIB
changes to log) instead of touching the engine directly, which keeps them
testable in isolation.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import InvalidArgument, ProtocolError
from .topo import PeerClass, Prefix

# Relationship class strictly dominates path length in route selection.
LOCAL_PREF = {
    PeerClass.CUSTOMER: 130,
    PeerClass.PEER: 110,
    PeerClass.FULL_TRANSIT: 100,
    PeerClass.PROVIDER: 90,
}


class MsgKind(Enum):
    UPDATE = "update"
    WITHDRAW = "withdraw"


@dataclass(frozen=True)
class RouteAdvert:
    """One route for one prefix: the AS path plus how and from whom it was learned.

    learned_from is None for locally originated routes.
    """

    prefix: Prefix
    as_path: tuple[int, ...]
    next_hop: int
    learned_from: PeerClass | None

    def __post_init__(self):
        if not self.as_path:
            raise InvalidArgument("a route must carry a non-empty AS path")


@dataclass(frozen=True)
class BgpMessage:
    kind: MsgKind
    prefix: Prefix
    as_path: tuple[int, ...] | None
    sender: int
    receiver: int

    def __post_init__(self):
        if self.kind is MsgKind.WITHDRAW and self.as_path is not None:
            raise InvalidArgument("withdrawals carry no AS path")
        if self.kind is MsgKind.UPDATE and not self.as_path:
            raise InvalidArgument("updates carry a non-empty AS path")


class _Withdrawn:
    def __repr__(self):
        return "WITHDRAWN"


#: adj-out marker: we explicitly withdrew our last advertisement to this neighbor.
WITHDRAWN = _Withdrawn()


@dataclass
class Rib:
    """Three-stage RIB: received candidates, chosen best, last advertised."""

    owner: int
    adj_in: dict[tuple[int, Prefix], RouteAdvert] = field(default_factory=dict)
    loc: dict[Prefix, RouteAdvert] = field(default_factory=dict)
    adj_out: dict[tuple[int, Prefix], RouteAdvert | _Withdrawn] = field(default_factory=dict)
    originated: dict[Prefix, RouteAdvert] = field(default_factory=dict)

    def candidates(self, prefix: Prefix) -> list[RouteAdvert]:
        out = [r for (n, p), r in self.adj_in.items() if p == prefix]
        if prefix in self.originated:
            out.append(self.originated[prefix])
        return out


def decide(candidates: set[RouteAdvert] | list[RouteAdvert], self_asn: int) -> RouteAdvert | None:
    """Pick the best route: local preference, then path length, then lowest next hop."""
    candidates = list(candidates)
    if not candidates:
        return None
    prefixes = {c.prefix for c in candidates}
    if len(prefixes) > 1:
        raise InvalidArgument("decide() requires candidates for a single prefix")
    for cand in candidates:
        if self_asn in cand.as_path and cand.learned_from is not None:
            raise InvalidArgument(f"candidate path {cand.as_path} loops through AS{self_asn}")

    def rank(route: RouteAdvert) -> tuple[int, int, int]:
        pref = 200 if route.learned_from is None else LOCAL_PREF[route.learned_from]
        return (-pref, len(route.as_path), route.next_hop)

    return min(candidates, key=rank)


def export_allowed(learned_from: PeerClass | None, to_relationship: PeerClass) -> bool:
    """Gao-Rexford valley-free rule, with full-transit links exempt from policy."""
    if to_relationship in (PeerClass.CUSTOMER, PeerClass.FULL_TRANSIT):
        return True
    # Toward peers and providers only self-originated and customer routes go out.
    return learned_from is None or learned_from is PeerClass.CUSTOMER


def export_filter(
    route: RouteAdvert, to_relationship: PeerClass, self_asn: int
) -> RouteAdvert | None:
    """Apply export policy and prepend self; None when the route is suppressed."""
    if not export_allowed(route.learned_from, to_relationship):
        return None
    return replace(
        route,
        as_path=(self_asn,) + route.as_path,
        next_hop=self_asn,
        learned_from=None,
    )


# --- effects returned to the event loop --------------------------------------


@dataclass(frozen=True)
class Emit:
    message: BgpMessage


@dataclass(frozen=True)
class ArmMrai:
    asn: int
    neighbor: int
    deadline_us: int


@dataclass(frozen=True)
class LocChange:
    asn: int
    prefix: Prefix
    old: RouteAdvert | None
    new: RouteAdvert | None


Effect = Emit | ArmMrai | LocChange


@dataclass
class BgpConfig:
    mrai_us: int = 2_000_000
    mrai_jitter: float = 0.10


class BgpNode:
    """One legacy BGP-speaking AS.

    Outbound changes are paced per neighbor: a route change marks the prefix
    pending and arms that neighbor's timer for one jittered MRAI interval;
    the pending delta is emitted when the timer expires. With mrai_us=0 the
    timer degenerates to an immediate flush at the current instant.
    """

    def __init__(
        self,
        asn: int,
        peer_classes: dict[int, PeerClass],
        config: BgpConfig | None = None,
        seed: int | str = 0,
    ):
        self.asn = asn
        self.peers = dict(peer_classes)
        self.config = config or BgpConfig()
        self.rib = Rib(owner=asn)
        self._seed = seed
        self._pending: dict[int, set[Prefix]] = {n: set() for n in self.peers}
        self._deadline: dict[int, int | None] = {n: None for n in self.peers}
        self._rng: dict[int, random.Random] = {}

    # -- timers ---------------------------------------------------------------

    def mrai_deadline(self, neighbor: int) -> int | None:
        return self._deadline.get(neighbor)

    def pending_prefixes(self, neighbor: int) -> set[Prefix]:
        return set(self._pending.get(neighbor, ()))

    def _jittered_interval(self, neighbor: int) -> int:
        base = self.config.mrai_us
        if base == 0:
            return 0
        rng = self._rng.get(neighbor)
        if rng is None:
            rng = random.Random(f"{self._seed}:mrai:{self.asn}:{neighbor}")
            self._rng[neighbor] = rng
        spread = self.config.mrai_jitter
        return int(base * (1.0 + spread * (2.0 * rng.random() - 1.0)))

    def _mark_pending(self, prefix: Prefix, now: int) -> list[Effect]:
        effects: list[Effect] = []
        for neighbor in sorted(self.peers):
            self._pending[neighbor].add(prefix)
            if self._deadline[neighbor] is None:
                deadline = now + self._jittered_interval(neighbor)
                self._deadline[neighbor] = deadline
                effects.append(ArmMrai(self.asn, neighbor, deadline))
        return effects

    def on_mrai_expiry(self, neighbor: int, deadline: int, now: int) -> list[Effect]:
        if neighbor not in self.peers or self._deadline.get(neighbor) != deadline:
            return []  # stale timer from a torn-down or re-armed session
        self._deadline[neighbor] = None
        return self._flush(neighbor, now)

    def _desired_export(self, neighbor: int, prefix: Prefix) -> tuple[int, ...] | None:
        loc = self.rib.loc.get(prefix)
        if loc is None:
            return None
        exported = export_filter(loc, self.peers[neighbor], self.asn)
        if exported is None or neighbor in exported.as_path:
            # Split horizon: the receiver would reject a path containing itself.
            return None
        return exported.as_path

    def _flush(self, neighbor: int, now: int) -> list[Effect]:
        effects: list[Effect] = []
        pending = self._pending[neighbor]
        for prefix in sorted(pending):
            desired = self._desired_export(neighbor, prefix)
            key = (neighbor, prefix)
            prev = self.rib.adj_out.get(key)
            if desired is None:
                if prev is not None and prev is not WITHDRAWN:
                    self.rib.adj_out[key] = WITHDRAWN
                    effects.append(
                        Emit(
                            BgpMessage(
                                MsgKind.WITHDRAW, prefix, None, self.asn, neighbor
                            )
                        )
                    )
            else:
                if prev is None or prev is WITHDRAWN or prev.as_path != desired:
                    advert = RouteAdvert(prefix, desired, self.asn, None)
                    self.rib.adj_out[key] = advert
                    effects.append(
                        Emit(
                            BgpMessage(MsgKind.UPDATE, prefix, desired, self.asn, neighbor)
                        )
                    )
        pending.clear()
        return effects

    # -- decision process -----------------------------------------------------

    def _redecide(self, prefix: Prefix, now: int) -> list[Effect]:
        old = self.rib.loc.get(prefix)
        new = self.rib.originated.get(prefix) or decide(self.rib.candidates(prefix), self.asn)
        if new == old:
            return []
        if new is None:
            del self.rib.loc[prefix]
        else:
            self.rib.loc[prefix] = new
        effects: list[Effect] = [LocChange(self.asn, prefix, old, new)]
        effects.extend(self._mark_pending(prefix, now))
        return effects

    # -- protocol events --------------------------------------------------------

    def on_message(self, msg: BgpMessage, now: int) -> list[Effect]:
        if msg.sender not in self.peers:
            raise ProtocolError(
                f"AS{self.asn} got a message from non-adjacent AS{msg.sender}"
            )
        key = (msg.sender, msg.prefix)
        if msg.kind is MsgKind.UPDATE:
            if self.asn in msg.as_path:
                # Loop detected: treat as an implicit withdrawal of any prior route.
                self.rib.adj_in.pop(key, None)
            else:
                self.rib.adj_in[key] = RouteAdvert(
                    msg.prefix, msg.as_path, msg.sender, self.peers[msg.sender]
                )
        else:
            self.rib.adj_in.pop(key, None)
        return self._redecide(msg.prefix, now)

    def originate(self, prefix: Prefix, now: int) -> list[Effect]:
        if prefix in self.rib.originated:
            return []  # idempotent: no change, no second message wave
        self.rib.originated[prefix] = RouteAdvert(prefix, (self.asn,), self.asn, None)
        return self._redecide(prefix, now)

    def withdraw_origin(self, prefix: Prefix, now: int) -> list[Effect]:
        if prefix not in self.rib.originated:
            raise InvalidArgument(
                f"AS{self.asn} never originated {prefix.cidr}, cannot withdraw"
            )
        del self.rib.originated[prefix]
        return self._redecide(prefix, now)

    # -- session lifecycle ------------------------------------------------------

    def on_session_down(self, neighbor: int, now: int) -> list[Effect]:
        if neighbor not in self.peers:
            return []
        del self.peers[neighbor]
        self._pending.pop(neighbor, None)
        self._deadline.pop(neighbor, None)
        affected = {p for (n, p) in self.rib.adj_in if n == neighbor}
        for prefix in affected:
            del self.rib.adj_in[(neighbor, prefix)]
        for key in [k for k in self.rib.adj_out if k[0] == neighbor]:
            del self.rib.adj_out[key]
        effects: list[Effect] = []
        for prefix in sorted(affected):
            effects.extend(self._redecide(prefix, now))
        return effects

    def on_session_up(self, neighbor: int, peer_class: PeerClass, now: int) -> list[Effect]:
        if neighbor in self.peers:
            return []
        self.peers[neighbor] = peer_class
        self._pending[neighbor] = set()
        self._deadline[neighbor] = None
        effects: list[Effect] = []
        for prefix in sorted(self.rib.loc):
            self._pending[neighbor].add(prefix)
        if self._pending[neighbor]:
            deadline = now + self._jittered_interval(neighbor)
            self._deadline[neighbor] = deadline
            effects.append(ArmMrai(self.asn, neighbor, deadline))
        return effects

    # -- introspection ----------------------------------------------------------

    def loc_route(self, prefix: Prefix) -> RouteAdvert | None:
        return self.rib.loc.get(prefix)

    def check_invariants(self) -> None:
        for (neighbor, prefix), advert in self.rib.adj_in.items():
            assert self.asn not in advert.as_path, (
                f"AS{self.asn} stores a looping path {advert.as_path} from AS{neighbor}"
            )
        for prefix, advert in self.rib.loc.items():
            if advert.learned_from is not None:
                assert self.asn not in advert.as_path
                recomputed = decide(self.rib.candidates(prefix), self.asn)
                assert recomputed == advert, (
                    f"AS{self.asn} loc route for {prefix.cidr} is stale"
                )
