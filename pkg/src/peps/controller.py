"""Per-domain control plane: policy repository, PDP, reactive rules and the PEPS app.

Every switch runs a three-table pipeline:

* table 0 - anti-spoofing pins, with a catch-all ``goto 1``;
* table 1 - reactive exact-match rules installed on packet_in;
* table 2 - the PEPS table, written only by :class:`PepsApp`.
"""

from __future__ import annotations

import enum
import ipaddress
from collections.abc import Callable, Sequence
from dataclasses import dataclass

from . import signing
from .dataplane import (
    FlowRule,
    FlowTablePipeline,
    MatchFields,
    Origin,
    OriginKind,
    PacketHeader,
    PipelineVerdict,
    Protocol,
    RuleAction,
    process_pipeline,
)
from .errors import (
    BadSignature,
    DuplicateAddress,
    InvariantError,
    MissingPeerKey,
    NotFound,
    RateLimited,
    Rejection,
    ScopeViolation,
    StaleSequence,
    UnknownPeer,
    UnknownSubscriber,
    UnknownSwitch,
    Violation,
)
from .location import GeoLocationTable, LocationZone, PacketInEvent, Sighting, track_host
from .policy import (
    ComposedPolicySet,
    DecisionKind,
    HeaderUniverse,
    Policy,
    PolicyTransfer,
    RemotePolicyTransfer,
    ServiceAddress,
    check_refinement,
    compile_transfer,
    decide,
)
from .routing import Fabric, Hop

IPv4 = ipaddress.IPv4Address

PIN_TABLE = 0
REACTIVE_TABLE = 1
REACTIVE_PRIO = 100
SPOOF_BLOCK_PRIO = 250
OUTSIDE_IP = IPv4("203.0.113.254")
EPHEMERAL_PORT = 49152


class PlacementStrategy(enum.Enum):
    ALL_SWITCHES = "AllSwitches"
    EDGE_ONLY = "EdgeOnly"


class SubscriberKind(enum.Enum):
    LOCAL_APP = "LocalApp"
    REMOTE_DOMAIN_APP = "RemoteDomainApp"


@dataclass(frozen=True)
class Subscriber:
    subscriber_id: str
    service_address: ServiceAddress
    public_key: bytes
    kind: SubscriberKind = SubscriberKind.LOCAL_APP
    domain_id: str | None = None


@dataclass
class TokenBucket:
    capacity: int = 10
    refill_rate: float = 1.0
    tokens: float | None = None
    last_tick: int = 0

    def __post_init__(self):
        if self.tokens is None:
            self.tokens = float(self.capacity)

    def take(self, now: int) -> bool:
        if now > self.last_tick:
            self.tokens = min(self.capacity, self.tokens + self.refill_rate * (now - self.last_tick))
            self.last_tick = now
        if self.tokens >= 1:
            self.tokens -= 1
            return True
        return False


@dataclass(frozen=True)
class TransferReport:
    accepted: bool
    reason: str | None = None
    witness: PacketHeader | None = None
    rules_installed: int = 0
    origin: Origin | None = None
    detail: str = ""

    def to_line(self) -> str:
        if self.accepted:
            return "ACCEPT"
        line = f"REJECT {self.reason}"
        if self.witness is not None:
            line += f" witness={self.witness.tuple_text()}"
        return line

    @classmethod
    def rejected(cls, exc: Rejection, origin: Origin | None = None) -> "TransferReport":
        witness = exc.witness if isinstance(exc, Violation) else None
        return cls(False, exc.reason, witness, 0, origin, str(exc))


@dataclass(frozen=True)
class Eviction:
    origin: Origin
    witness: PacketHeader

    def line(self) -> str:
        return f"EVICT {self.origin.text()} witness={self.witness.tuple_text()}"


@dataclass(frozen=True)
class PacketInResult:
    verdict: PipelineVerdict
    installed: tuple[FlowRule, ...] = ()
    sighting: Sighting | None = None
    spoofed: bool = False


@dataclass
class Switch:
    switch_id: str
    pipeline: FlowTablePipeline
    edge: bool


class PepsApp:
    """Sole writer of every switch's PEPS table."""

    def __init__(self, ctrl: "Controller"):
        self.ctrl = ctrl

    def placement(self, origin: Origin) -> list[Switch]:
        strategy = (self.ctrl.pt_placement if origin.kind is OriginKind.LOCAL_PT
                    else self.ctrl.rpt_placement)
        switches = self.ctrl.switches.values()
        if strategy is PlacementStrategy.EDGE_ONLY:
            return [s for s in switches if s.edge]
        return list(switches)

    def rules_for(self, origin: Origin) -> list[FlowRule]:
        repo = self.ctrl.repo
        last = self.ctrl.n_tables - 1
        if origin.kind is OriginKind.LOCAL_PT:
            pt, scope = repo.accepted_pt[origin.subscriber_id]
            return compile_transfer(pt.policies, origin, scope, last)
        rpt = repo.accepted_rpt[(origin.domain_id, origin.subscriber_id)]
        return compile_transfer(rpt.policies, origin, rpt.subscriber_service_address, last)

    def install(self, origin: Origin) -> int:
        self.remove(origin)
        rules = self.rules_for(origin)
        n = 0
        for sw in self.placement(origin):
            for r in rules:
                sw.pipeline.install(r)
                n += 1
        return n

    def remove(self, origin: Origin) -> int:
        return sum(sw.pipeline.remove_where(lambda r: r.origin == origin)
                   for sw in self.ctrl.switches.values())


class Controller:
    def __init__(self, domain_id: str, fabric: Fabric | None = None, *,
                 keypair: signing.KeyPair | None = None,
                 local_policies: Sequence[Policy] = (),
                 n_tables: int = 3,
                 bucket: TokenBucket | None = None,
                 pt_placement: PlacementStrategy = PlacementStrategy.ALL_SWITCHES,
                 rpt_placement: PlacementStrategy = PlacementStrategy.EDGE_ONLY,
                 universe: HeaderUniverse | None = None):
        self.domain_id = domain_id
        self.fabric = fabric if fabric is not None else Fabric()
        self.keypair = keypair or signing.KeyPair.generate(f"controller:{domain_id}")
        self.n_tables = n_tables
        self.repo = ComposedPolicySet(local=list(local_policies))
        self.registry: dict[str, Subscriber] = {}
        self.peer_keys: dict[str, bytes] = {}
        self.geo = GeoLocationTable()
        self.bucket = bucket or TokenBucket()
        self.pt_placement = pt_placement
        self.rpt_placement = rpt_placement
        self.base_universe = universe
        self.peps = PepsApp(self)
        self.switches: dict[str, Switch] = {}
        self.pins: dict[IPv4, tuple[str, int]] = {}
        self.last_sequence: dict[Origin, int] = {}
        # called with (host_ip, zone, moved) whenever a host's zone binding changes
        self.location_listeners: list[Callable[[IPv4, LocationZone, bool], None]] = []
        # east-west plumbing, filled in by the interdomain module
        self.channels: dict = {}
        self.sessions: dict = {}
        self.now = 0
        self.oracle_runs = 0
        self.packet_ins = 0
        self.spoofs_blocked = 0
        self.refresh_switches()

    # ------------------------------------------------------------------ setup

    @property
    def local_policies(self) -> list[Policy]:
        return self.repo.local

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    def refresh_switches(self) -> None:
        """Create pipelines for any fabric switch of this domain not yet known."""
        for sid in self.fabric.switches_in(self.domain_id):
            if sid not in self.switches:
                pipe = FlowTablePipeline(self.n_tables)
                pipe.install(FlowRule(MatchFields(), RuleAction.goto(REACTIVE_TABLE), 0, PIN_TABLE))
                self.switches[sid] = Switch(sid, pipe, False)
        for sid, sw in self.switches.items():
            sw.edge = self.fabric.is_edge(sid)

    def switch(self, switch_id: str) -> Switch:
        try:
            return self.switches[switch_id]
        except KeyError:
            raise UnknownSwitch(f"{switch_id} is not in domain {self.domain_id}") from None

    def set_zone(self, switch_id: str, port_id: int, zone: LocationZone) -> None:
        self.switch(switch_id)
        self.geo.zone_map[(switch_id, port_id)] = zone

    def add_peer_key(self, domain_id: str, public_key: bytes) -> None:
        self.peer_keys[domain_id] = public_key

    def tick(self, now: int) -> None:
        self.now = now

    # ------------------------------------------------------------ subscribers

    def register_subscriber(self, sub: Subscriber) -> str:
        for other in self.registry.values():
            if other.subscriber_id != sub.subscriber_id and \
                    other.service_address.overlaps(sub.service_address):
                raise DuplicateAddress(
                    f"{sub.service_address.text()} overlaps {other.subscriber_id}")
        if sub.kind is SubscriberKind.REMOTE_DOMAIN_APP:
            if sub.domain_id not in self.peer_keys:
                raise MissingPeerKey(f"no key on file for domain {sub.domain_id}")
        self.registry[sub.subscriber_id] = sub
        return sub.subscriber_id

    # -------------------------------------------------------------- universe

    def universe_for(self, policies: Sequence[Policy] = (),
                     scopes: Sequence[ServiceAddress] = ()) -> HeaderUniverse:
        """Header space used by the oracle: every known host and service value."""
        base = self.base_universe
        if base is None:
            ips = set(self.fabric.hosts) | {OUTSIDE_IP}
            ports = {0}
            for sub in self.registry.values():
                ips.add(sub.service_address.ip)
                ports.update(sub.service_address.ports or ())
            base = HeaderUniverse(tuple(ips), tuple(ips), (EPHEMERAL_PORT,), tuple(ports),
                                  (Protocol.TCP, Protocol.UDP, Protocol.ICMP))
        return base.extended_with(list(self.repo.local) + list(policies), scopes)

    def _oracle(self, local: Sequence[Policy], transfer: PolicyTransfer,
                scope: ServiceAddress) -> None:
        self.oracle_runs += 1
        universe = self.universe_for(transfer.policies, [scope])
        universe.check_size()
        check_refinement(local, transfer.policies, universe, scope)

    # ------------------------------------------------------------- transfers

    def _envelope(self, transfer: PolicyTransfer, origin: Origin, key: bytes) -> None:
        if not transfer.verify(key):
            raise BadSignature(f"signature check failed for {origin.text()}")
        last = self.last_sequence.get(origin)
        if last is not None and transfer.sequence_number <= last:
            raise StaleSequence(f"sequence {transfer.sequence_number} not above {last}")

    def _accept(self, transfer: PolicyTransfer, origin: Origin,
                scope: ServiceAddress) -> TransferReport:
        if origin.kind is OriginKind.LOCAL_PT:
            self.repo.accepted_pt[origin.subscriber_id] = (transfer, scope)
        else:
            self.repo.accepted_rpt[(origin.domain_id, origin.subscriber_id)] = transfer
        self.last_sequence[origin] = transfer.sequence_number
        n = self.peps.install(origin)
        return TransferReport(True, rules_installed=n, origin=origin)

    def receive_pt(self, pt: PolicyTransfer) -> TransferReport:
        origin = Origin.pt(pt.subscriber_id)
        try:
            if not self.bucket.take(self.now):
                raise RateLimited("transfer update rate exceeded")
            sub = self.registry.get(pt.subscriber_id)
            if sub is None or sub.kind is not SubscriberKind.LOCAL_APP:
                raise UnknownSubscriber(f"{pt.subscriber_id} is not a local subscriber")
            self._envelope(pt, origin, sub.public_key)
            self._oracle(self.repo.local, pt, sub.service_address)
        except Rejection as exc:
            return TransferReport.rejected(exc, origin)
        return self._accept(pt, origin, sub.service_address)

    def _check_rpt_scope(self, rpt: RemotePolicyTransfer) -> None:
        scope = rpt.subscriber_service_address
        sub = self.registry.get(rpt.subscriber_id)
        if sub is not None:
            owned = (sub.kind is SubscriberKind.REMOTE_DOMAIN_APP
                     and sub.domain_id == rpt.origin_domain_id
                     and sub.service_address.ip == scope.ip
                     and (sub.service_address.ports is None
                          or (scope.ports is not None
                              and scope.ports <= sub.service_address.ports)))
        else:
            owned = self.fabric.host_domain(scope.ip) == rpt.origin_domain_id
        if not owned:
            raise ScopeViolation(-1, f"{scope.text()} is not an address of "
                                     f"{rpt.origin_domain_id}/{rpt.subscriber_id}")
        for i, p in enumerate(rpt.policies):
            if not scope.covers(p.match):
                raise ScopeViolation(i, f"policy {i} leaves scope {scope.text()}")

    def receive_rpt(self, rpt: RemotePolicyTransfer) -> TransferReport:
        origin = Origin.rpt(rpt.origin_domain_id, rpt.subscriber_id)
        try:
            if not self.bucket.take(self.now):
                raise RateLimited("transfer update rate exceeded")
            key = self.peer_keys.get(rpt.origin_domain_id)
            if key is None:
                raise UnknownPeer(f"no key for domain {rpt.origin_domain_id}")
            self._envelope(rpt, origin, key)
            self._check_rpt_scope(rpt)
            self._oracle(self.repo.local, rpt, rpt.subscriber_service_address)
        except Rejection as exc:
            return TransferReport.rejected(exc, origin)
        return self._accept(rpt, origin, rpt.subscriber_service_address)

    def revoke_transfer(self, subscriber_id: str, domain_id: str | None = None) -> int:
        if domain_id is None:
            if subscriber_id not in self.repo.accepted_pt:
                raise NotFound(f"no accepted PT for {subscriber_id}")
            del self.repo.accepted_pt[subscriber_id]
            return self.peps.remove(Origin.pt(subscriber_id))
        if (domain_id, subscriber_id) not in self.repo.accepted_rpt:
            raise NotFound(f"no accepted RPT for {domain_id}/{subscriber_id}")
        del self.repo.accepted_rpt[(domain_id, subscriber_id)]
        return self.peps.remove(Origin.rpt(domain_id, subscriber_id))

    def accepted_origins(self) -> list[Origin]:
        return ([Origin.pt(s) for s in sorted(self.repo.accepted_pt)]
                + [Origin.rpt(d, s) for d, s in sorted(self.repo.accepted_rpt)])

    def on_local_policy_change(self, new_local: Sequence[Policy]) -> list[Eviction]:
        """Swap in new local policies, flush cached decisions, evict violators."""
        self.repo.local = list(new_local)
        for sw in self.switches.values():
            sw.pipeline.remove_where(lambda r: r.table_index == REACTIVE_TABLE)
        evicted = []
        for origin in self.accepted_origins():
            if origin.kind is OriginKind.LOCAL_PT:
                transfer, scope = self.repo.accepted_pt[origin.subscriber_id]
            else:
                transfer = self.repo.accepted_rpt[(origin.domain_id, origin.subscriber_id)]
                scope = transfer.subscriber_service_address
            try:
                self._oracle(self.repo.local, transfer, scope)
            except Violation as v:
                self.revoke_transfer(origin.subscriber_id, origin.domain_id)
                evicted.append(Eviction(origin, v.witness))
        return evicted

    # ------------------------------------------------------------- coherence

    def expected_peps_rules(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {sid: [] for sid in self.switches}
        for origin in self.accepted_origins():
            texts = [r.text() for r in self.peps.rules_for(origin)]
            for sw in self.peps.placement(origin):
                out[sw.switch_id] += texts
        return {k: sorted(v) for k, v in out.items()}

    def installed_peps_rules(self) -> dict[str, list[str]]:
        return {sid: sorted(r.text() for r in sw.pipeline.rules() if r.origin.is_peps)
                for sid, sw in self.switches.items()}

    def check_coherence(self) -> None:
        if self.expected_peps_rules() != self.installed_peps_rules():
            raise InvariantError(f"{self.domain_id}: PEPS rules diverge from the repository")
        for sw in self.switches.values():
            sw.pipeline.check_invariants()

    # ------------------------------------------------------------- packet_in

    def _is_spoof(self, switch_id: str, port_id: int, pkt: PacketHeader) -> bool:
        pin = self.pins.get(pkt.src_ip)
        return (pin is not None and pin != (switch_id, port_id)
                and self.fabric.is_host_port(switch_id, port_id))

    def _path_rules(self, hops: list[Hop], pkt: PacketHeader, first_action: RuleAction,
                    allowed: bool) -> list[tuple[str, FlowRule]]:
        rules = []
        dst = ipaddress.IPv4Network((int(pkt.dst_ip), 32))
        for i, hop in enumerate(hops):
            if hop.switch_id not in self.switches:
                break
            if i == 0:
                action = first_action
            elif allowed:
                action = RuleAction.forward(hop.out_port)
            else:
                break
            match = MatchFields(src_ip=pkt.src_ip, dst_ip=dst,
                                src_port=pkt.src_port, dst_port=pkt.dst_port,
                                protocol=pkt.protocol, in_port=hop.in_port)
            rules.append((hop.switch_id, FlowRule(match, action, REACTIVE_PRIO, REACTIVE_TABLE)))
        return rules

    def handle_packet_in(self, switch_id: str, port_id: int, pkt: PacketHeader) -> PacketInResult:
        sw = self.switch(switch_id)
        self.packet_ins += 1
        pkt = pkt.at_port(port_id)
        if self._is_spoof(switch_id, port_id, pkt):
            self.spoofs_blocked += 1
            rule = sw.pipeline.install(FlowRule(MatchFields(src_ip=pkt.src_ip, in_port=port_id),
                                                RuleAction.drop(), SPOOF_BLOCK_PRIO, PIN_TABLE))
            return PacketInResult(process_pipeline(sw.pipeline, pkt, self.now), (rule,), None, True)

        sighting = None
        if (switch_id, port_id) in self.geo.zone_map:
            before = self.geo.zone_of(pkt.src_ip)
            sighting = track_host(self.geo, PacketInEvent(switch_id, port_id, pkt.src_ip, self.now))
            if before != sighting.zone:
                for listener in list(self.location_listeners):
                    listener(pkt.src_ip, sighting.zone, sighting.moved)

        decision = decide(self.repo.local, pkt)
        hops = self.fabric.route(switch_id, port_id, pkt.dst_ip)
        if hops is None or decision.denies:
            rules = self._path_rules([Hop(switch_id, port_id, 0)], pkt, RuleAction.drop(), False)
        else:
            out = hops[0].out_port
            if decision.kind is DecisionKind.RATE_LIMIT:
                first = RuleAction.rate_limit(decision.max_new_flows, decision.window_ticks, out)
            else:
                first = RuleAction.forward(out)
            rules = self._path_rules(hops, pkt, first, True)
        installed = tuple(self.switches[sid].pipeline.install(r) for sid, r in rules)
        verdict = process_pipeline(sw.pipeline, pkt, self.now)
        return PacketInResult(verdict, installed, sighting)
