"""Deterministic tick-based simulation of several SDN domains.

Events are ordered by (tick, insertion number).  Within one tick the loop
runs scheduled events first (hooks, injections, packet arrivals), then hands
east-west envelopes that are due to the receiving controllers, then lets each
controller work through at most ``budget`` queued messages.  A packet moves
one hop per tick; a packet_in costs the packet one controller round.
"""

from __future__ import annotations

import enum
import heapq
import ipaddress
import itertools
from collections import deque
from dataclasses import dataclass, field

from .. import signing
from ..controller import Controller, Subscriber
from ..dataplane import MatchFields, PacketHeader, PipelineVerdict, VerdictKind, process_pipeline
from ..errors import InvariantError, PepsError, Rejection, UnknownHost
from ..interdomain import (
    EastWestChannel,
    LbacSession,
    connect_domains,
    open_lbac_session,
    provision_keys,
    send_rpt_to,
    teardown,
)
from ..location import (
    LocationTicket,
    LocationZone,
    issue_ticket,
    make_ltr,
    pin_port,
    verify_ticket,
)
from ..policy import ALLOW, Policy, PolicyTransfer, ServiceAddress, decide, make_rpt
from ..routing import Fabric
from .metrics import MetricsCollector, MetricsReport, link_column
from .scenario import HookDecl, ScenarioSpec, parse_scenario

IPv4 = ipaddress.IPv4Address

DEFAULT_BUDGET = 100
MAX_TICKS = 1_000_000
ALLOW_ALL = (Policy(MatchFields(), ALLOW, 0, "default"),)


class EventKind(enum.Enum):
    INJECT = "Inject"
    ARRIVE = "Arrive"
    DELIVER = "Deliver"
    PACKET_IN = "PacketIn"
    POLICY_MSG = "PolicyMsg"
    EW_DELIVER = "EWDeliver"
    HOOK = "Hook"


@dataclass(frozen=True)
class SimEvent:
    tick: int
    seq: int
    kind: EventKind
    payload: tuple = ()


@dataclass
class Host:
    name: str
    ip: IPv4
    domain: str
    switch: str
    port: int
    keypair: signing.KeyPair
    ticket: LocationTicket | None = None


@dataclass
class Flight:
    """One injected packet on its way through the network."""

    pid: int
    header: PacketHeader
    src_host: str
    label: str
    src_domain: str
    dst_domain: str | None
    ticket: LocationTicket | None = None
    presenter_key: bytes = b""


@dataclass
class DataProviderStub:
    """A data provider with its own application-level PEP."""

    subscriber_id: str
    address: ServiceAddress
    policies: list[Policy]
    ticket_zones: frozenset[str] | None = None
    log: list[str] = field(default_factory=list)

    def serves(self, pkt: PacketHeader) -> bool:
        return self.address.contains(pkt)

    def evaluate(self, flight: Flight, now: int, issuer_keys: dict[str, bytes]) -> tuple[bool, str]:
        decision = decide(self.policies, flight.header)
        if decision.denies:
            return False, decision.text()
        if self.ticket_zones is not None:
            lt = flight.ticket
            if lt is None:
                return False, "NoTicket"
            key = issuer_keys.get(lt.issuer_domain_id)
            if key is None:
                return False, "UnknownIssuer"
            check = verify_ticket(lt, key, now, expected_ip=flight.header.src_ip,
                                  expected_key=flight.presenter_key)
            if not check.accepted:
                return False, check.reason.value
            if lt.zone_id not in self.ticket_zones:
                return False, f"Zone {lt.zone_id}"
        return True, "granted"


class Topology:
    """Network, controllers, hosts and the pending event stream of one run."""

    def __init__(self, spec: ScenarioSpec, budget: int = DEFAULT_BUDGET):
        self.spec = spec
        self.seed = spec.seed
        self.budget = budget
        self.fabric = Fabric()
        self.controllers: dict[str, Controller] = {}
        self.hosts: dict[str, Host] = {}
        self.host_by_ip: dict[IPv4, Host] = {}
        self.stubs: list[DataProviderStub] = []
        self.subscriber_keys: dict[str, signing.KeyPair] = {}
        self.channels: list[EastWestChannel] = []
        self.sessions: dict[tuple[str, str, str], LbacSession] = {}
        self.queues: dict[str, deque] = {}
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._seq = itertools.count()
        self._pid = itertools.count()
        self._transfer_seq: dict[tuple[str, str], int] = {}
        self.links: list[str] = []
        self.ran = False
        self._build()

    # ------------------------------------------------------------------ build

    def _build(self) -> None:
        spec = self.spec
        fab = self.fabric
        for sw, dom in spec.switches.items():
            fab.add_switch(sw, dom)
        for h in spec.hosts:
            if h.name in self.hosts:
                raise InvariantError(f"line {h.line}: host {h.name} declared twice")
            if h.switch not in spec.switches:
                raise InvariantError(f"line {h.line}: unknown switch {h.switch}")
            try:
                fab.add_host(h.ip, h.switch, h.port)
            except InvariantError as exc:
                raise InvariantError(f"line {h.line}: {exc}") from None
            host = Host(h.name, h.ip, spec.switches[h.switch], h.switch, h.port,
                        signing.KeyPair.generate(f"{self.seed}:host:{h.name}"))
            self.hosts[h.name] = host
            self.host_by_ip[h.ip] = host
        for ln in spec.links:
            for sw in (ln.a, ln.b):
                if sw not in spec.switches:
                    raise InvariantError(f"line {ln.line}: unknown switch {sw}")
            try:
                fab.add_link(ln.a, ln.pa, ln.b, ln.pb)
            except InvariantError as exc:
                raise InvariantError(f"line {ln.line}: {exc}") from None
            col = link_column(*sorted((ln.a, ln.b)))
            if col not in self.links:
                self.links.append(col)
        fab.check_connected()

        for dom in fab.domains():
            ctrl = Controller(dom, fab,
                              keypair=signing.KeyPair.generate(f"{self.seed}:controller:{dom}"),
                              local_policies=spec.policies.get(dom, ALLOW_ALL))
            self.controllers[dom] = ctrl
            self.queues[dom] = deque()
        for dom in spec.policies:
            if dom not in self.controllers:
                raise InvariantError(f"policies for unknown domain {dom}")

        claimed: set[tuple[str, int]] = set()
        for z in spec.zones:
            zone = LocationZone(z.zone_id, z.label, z.security)
            for sw, port in z.ports:
                if sw not in spec.switches:
                    raise InvariantError(f"line {z.line}: unknown switch {sw}")
                if (sw, port) in claimed:
                    raise InvariantError(f"line {z.line}: {sw}:{port} is in two zones")
                claimed.add((sw, port))
                self.controllers[spec.switches[sw]].set_zone(sw, port, zone)

        provision_keys(*self.controllers.values())
        for s in spec.subscribers:
            host = self._host(s.host, s.line)
            key = signing.KeyPair.generate(f"{self.seed}:subscriber:{s.subscriber_id}")
            addr = ServiceAddress(host.ip, s.ports)
            try:
                self.controllers[host.domain].register_subscriber(
                    Subscriber(s.subscriber_id, addr, key.public_key))
            except PepsError as exc:
                raise InvariantError(f"line {s.line}: {exc}") from None
            self.subscriber_keys[s.subscriber_id] = key
            inner = spec.inner.get(s.subscriber_id, list(ALLOW_ALL))
            self.stubs.append(DataProviderStub(s.subscriber_id, addr, inner, s.ticket_zones))
        known = {s.subscriber_id for s in spec.subscribers}
        for sub in spec.inner:
            if sub not in known:
                raise InvariantError(f"inner policies for unknown subscriber {sub}")

        for c in spec.channels:
            for dom in (c.a, c.b):
                if dom not in self.controllers:
                    raise InvariantError(f"line {c.line}: unknown domain {dom}")
            ch = connect_domains(self.controllers[c.a], self.controllers[c.b], c.latency)
            ch.auto_flush = False
            if ch not in self.channels:
                self.channels.append(ch)

        for hook in spec.hooks:
            self._schedule(hook.tick, EventKind.HOOK, (hook,))
        for inj in spec.injections:
            src = self._host(inj.src_host, inj.line)
            dst_ip = self._resolve(inj.dst, inj.line)
            if inj.ticket_of is not None:
                self._host(inj.ticket_of, inj.line)
            for k in range(inj.count):
                self._schedule(inj.tick + k * inj.every, EventKind.INJECT, (src.name, dst_ip, inj))

    def _host(self, name: str, line: int | None = None) -> Host:
        try:
            return self.hosts[name]
        except KeyError:
            where = f"line {line}: " if line else ""
            raise UnknownHost(f"{where}unknown host {name}") from None

    def _resolve(self, dst: str, line: int) -> IPv4:
        if dst in self.hosts:
            return self.hosts[dst].ip
        try:
            return IPv4(dst)
        except ValueError:
            raise InvariantError(f"line {line}: {dst!r} is neither a host nor an address") \
                from None

    def _schedule(self, tick: int, kind: EventKind, payload: tuple) -> SimEvent:
        ev = SimEvent(tick, next(self._seq), kind, payload)
        heapq.heappush(self._heap, (tick, ev.seq, ev))
        return ev

    # ------------------------------------------------------------ injection

    def inject(self, at_tick: int, from_host: str, pkt: PacketHeader, label: str = "",
               ticket_of: str | None = None) -> SimEvent:
        host = self._host(from_host)
        if ticket_of is not None:
            self._host(ticket_of)
        return self._schedule(at_tick, EventKind.INJECT, (host.name, pkt, label, ticket_of))

    def _make_flight(self, payload: tuple) -> Flight:
        pid = next(self._pid)
        host = self.hosts[payload[0]]
        if isinstance(payload[1], PacketHeader):
            header, label, ticket_of = payload[1], payload[2], payload[3]
        else:
            dst_ip, inj = payload[1], payload[2]
            sport = inj.sport if inj.sport is not None else 10000 + pid % 50000
            header = PacketHeader(inj.src_ip or host.ip, dst_ip, sport, inj.dport, inj.protocol)
            label, ticket_of = inj.label, inj.ticket_of
        holder = self.hosts[ticket_of] if ticket_of else None
        return Flight(pid, header, host.name, label, host.domain,
                      self.fabric.host_domain(header.dst_ip),
                      holder.ticket if holder else None,
                      holder.keypair.public_key if holder else b"")

    # ------------------------------------------------------------------- run

    def _pending(self) -> bool:
        return bool(self._heap or any(self.queues.values())
                    or any(ch.in_flight() for ch in self.channels))

    def run(self, until_tick: int | None = None) -> MetricsReport:
        if self.ran:
            raise InvariantError("a topology can only be run once")
        self.ran = True
        until = until_tick if until_tick is not None else self.spec.until
        self.metrics = MetricsCollector(self.links)
        self.report = self.metrics.report
        self.log = self.report.log
        t = 0
        while True:
            if until is not None:
                if t > until:
                    break
            elif not self._pending():
                break
            elif t > MAX_TICKS:
                raise InvariantError("simulation did not settle")
            self._step(t)
            t += 1
        self.report.in_flight = (
            sum(1 for _, _, ev in self._heap if ev.kind is not EventKind.HOOK
                and ev.kind is not EventKind.INJECT)
            + sum(1 for q in self.queues.values() for m in q if m[0] == "packet_in"))
        report = self.metrics.finish()
        report.check_conservation()
        return report

    def _step(self, t: int) -> None:
        self.metrics.open_tick(t)
        for ctrl in self.controllers.values():
            ctrl.tick(t)
        while self._heap and self._heap[0][0] == t:
            _, _, ev = heapq.heappop(self._heap)
            self._handle(ev, t)
        for ch in self.channels:
            for receipt in ch.due(t):
                self.queues[receipt.envelope.to_domain].append(("ew", ch, receipt))
        for dom, ctrl in self.controllers.items():
            q = self.queues[dom]
            for _ in range(min(self.budget, len(q))):
                self._controller_msg(ctrl, q.popleft(), t)
                self.metrics.bump("controller_msgs_processed")
        self.metrics.close_tick()

    # --------------------------------------------------------------- events

    def _handle(self, ev: SimEvent, t: int) -> None:
        kind = ev.kind
        if kind is EventKind.HOOK:
            self._hook(ev.payload[0], t)
        elif kind is EventKind.INJECT:
            flight = self._make_flight(ev.payload)
            host = self.hosts[flight.src_host]
            self.report.injected += 1
            self.log.append(f"{t} INJECT {flight.pid} {flight.header.tuple_text()} "
                            f"from={host.name} label={flight.label}")
            self._arrive(flight, self.fabric.hosts.get(host.ip, (host.switch, host.port)), t)
        elif kind is EventKind.ARRIVE:
            flight, sw, port = ev.payload
            self._arrive(flight, (sw, port), t)
        elif kind is EventKind.DELIVER:
            self._deliver(ev.payload[0], t)

    def _arrive(self, flight: Flight, at: tuple[str, int], t: int) -> None:
        sw, port = at
        dom = self.fabric.domain_of[sw]
        pipe = self.controllers[dom].switch(sw).pipeline
        verdict = process_pipeline(pipe, flight.header.at_port(port), t)
        if verdict.kind is VerdictKind.SEND_TO_CONTROLLER:
            self.metrics.bump("packet_in_count")
            self.queues[dom].append(("packet_in", flight, sw, port))
            return
        self._after(flight, sw, verdict, t)

    def _after(self, flight: Flight, sw: str, verdict: PipelineVerdict, t: int) -> None:
        if verdict.kind is VerdictKind.FORWARD:
            end = self.fabric.peer_of(sw, verdict.port)
            if end is not None and end.kind == "switch":
                self.metrics.bump(link_column(*sorted((sw, end.peer))))
                self._schedule(t + 1, EventKind.ARRIVE, (flight, end.peer, end.peer_port))
                return
            if end is not None:
                self._schedule(t + 1, EventKind.DELIVER, (flight,))
                return
        self._drop(flight, sw, verdict, t)

    def _drop(self, flight: Flight, sw: str, verdict: PipelineVerdict, t: int) -> None:
        dom = self.fabric.domain_of[sw]
        if dom == flight.src_domain and dom != flight.dst_domain:
            counter = "dropped_at_source_edge"
        elif dom == flight.dst_domain:
            counter = "dropped_at_dp_network"
        else:
            counter = "dropped_in_transit"
        self.metrics.network_drop(counter, dom, flight.label)
        self.log.append(f"{t} DROP {flight.pid} at={sw} table={verdict.table_index} "
                        f"{verdict} {counter}")

    def _deliver(self, flight: Flight, t: int) -> None:
        stub = next((s for s in self.stubs if s.serves(flight.header)), None)
        if stub is None:
            self.metrics.bump("delivered")
            self.log.append(f"{t} DELIVER {flight.pid}")
            return
        keys = {d: c.public_key for d, c in self.controllers.items()}
        granted, why = stub.evaluate(flight, t, keys)
        entry = (flight.pid, flight.label)
        stub.log.append(f"{t} {flight.pid} {flight.header.tuple_text()} {why}")
        if granted:
            self.metrics.bump("delivered")
            self.report.granted.append(entry)
        else:
            self.metrics.bump("dropped_at_dp_app")
            self.report.refused.append(entry)
        self.log.append(f"{t} APP {flight.pid} {stub.subscriber_id} {why}")

    # ----------------------------------------------------------- controllers

    def _controller_msg(self, ctrl: Controller, msg: tuple, t: int) -> None:
        kind = msg[0]
        if kind == "packet_in":
            _, flight, sw, port = msg
            res = ctrl.handle_packet_in(sw, port, flight.header)
            self.log.append(f"{t} PACKET_IN {flight.pid} at={sw}:{port} -> {res.verdict}")
            if res.verdict.kind is VerdictKind.SEND_TO_CONTROLLER:
                raise InvariantError(f"packet {flight.pid} still misses after packet_in")
            self._after(flight, sw, res.verdict, t)
        elif kind == "pt":
            rep = ctrl.receive_pt(msg[1])
            self.log.append(f"{t} PT {ctrl.domain_id} {msg[1].subscriber_id} {rep.to_line()}")
        elif kind == "ew":
            _, ch, receipt = msg
            ch.deliver(receipt)
            env = receipt.envelope
            self.log.append(f"{t} EW {env.from_domain}->{env.to_domain} #{env.seq} "
                            f"{env.type.value} {receipt.result}")
        elif kind == "ltr":
            _, host, ltr, observed = msg
            try:
                host.ticket = issue_ticket(ctrl, ltr, observed)
                self.log.append(f"{t} LTR {host.name} -> {host.ticket.line()}")
            except Rejection as exc:
                self.log.append(f"{t} LTR {host.name} -> REJECT {exc.reason}")

    # ----------------------------------------------------------------- hooks

    def _next_seq(self, key: tuple[str, str]) -> int:
        self._transfer_seq[key] = self._transfer_seq.get(key, 0) + 1
        return self._transfer_seq[key]

    def _subscriber(self, sub_id: str, line: int) -> tuple[Controller, Subscriber]:
        for ctrl in self.controllers.values():
            if sub_id in ctrl.registry and ctrl.registry[sub_id].domain_id is None:
                return ctrl, ctrl.registry[sub_id]
        raise InvariantError(f"line {line}: unknown subscriber {sub_id}")

    def _hook(self, hook: HookDecl, t: int) -> None:
        kind, args = hook.kind, hook.args
        self.log.append(f"{t} HOOK {kind} {' '.join(args)}")
        try:
            self._run_hook(hook, t)
        except PepsError as exc:
            raise InvariantError(f"line {hook.line}: {kind} hook failed: {exc}") from None

    def _run_hook(self, hook: HookDecl, t: int) -> None:
        kind, args = hook.kind, hook.args
        if kind == "disable_outer":
            for ctrl in self.controllers.values():
                for sw in ctrl.switches.values():
                    sw.pipeline.peps_enabled = False
        elif kind == "lbac":
            provider, requestor, sub = args
            zones = hook.options["zones"].split(",")
            self.sessions[(provider, requestor, sub)] = open_lbac_session(
                self.controllers[provider], self.controllers[requestor], sub, zones)
        elif kind == "teardown":
            teardown(self.sessions[tuple(args)])
        elif kind == "pin":
            host = self._host(args[0], hook.line)
            pin_port(self.controllers[host.domain], host.ip, host.switch, host.port)
        elif kind == "rpt":
            origin, target, sub_id = args
            ctrl, sub = self._subscriber(sub_id, hook.line)
            if ctrl.domain_id != origin:
                raise InvariantError(f"{sub_id} does not live in {origin}")
            rpt = make_rpt(origin, sub_id, sub.service_address, hook.policies,
                           self._next_seq((origin, sub_id))).signed(ctrl.keypair)
            send_rpt_to(ctrl, target, rpt)
        elif kind == "pt":
            ctrl, sub = self._subscriber(args[0], hook.line)
            pt = PolicyTransfer(args[0], hook.policies, self._next_seq(("pt", args[0])))
            self.queues[ctrl.domain_id].append(("pt", pt.signed(self.subscriber_keys[args[0]])))
        elif kind == "move":
            host = self._host(args[0], hook.line)
            sw, _, port = args[1].rpartition(":")
            self.fabric.move_host(host.ip, sw, int(port))
            host.switch, host.port = sw, int(port)
            host.domain = self.fabric.domain_of[sw]
        elif kind == "ltr":
            host = self._host(args[0], hook.line)
            sender = self._host(hook.options["from"], hook.line) if "from" in hook.options \
                else host
            ltr = make_ltr(host.ip, host.keypair, t)
            self.queues[sender.domain].append(("ltr", host, ltr, sender.ip))
        elif kind == "local":
            evictions = self.controllers[args[0]].on_local_policy_change(hook.policies)
            for ev in evictions:
                self.log.append(f"{t} {ev.line()}")


def build_topology(spec: str | ScenarioSpec, budget: int = DEFAULT_BUDGET) -> Topology:
    if isinstance(spec, str):
        spec = parse_scenario(spec)
    return Topology(spec, budget)


def inject(topology: Topology, at_tick: int, from_host: str, pkt: PacketHeader,
           label: str = "") -> SimEvent:
    return topology.inject(at_tick, from_host, pkt, label)


def run(topology: Topology, until_tick: int | None = None) -> MetricsReport:
    return topology.run(until_tick)
