"""East-west channels between controllers and the real-time LBAC session.

Envelopes travel as one text line::

    EW <from> <to> SEQ <n> TYPE <RPT|SESSION|BINDING> <hex payload> SIG <hex>

signed by the sending controller over everything before `` SIG``.  Delivery is
FIFO per direction with a fixed latency in ticks.  A channel either delivers
as soon as something is sent (``auto_flush``, handy for setup and tests) or
leaves due envelopes for the simulator to hand to the receiving controller.
"""

from __future__ import annotations

import enum
import ipaddress
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import networkx as nx

from . import signing
from .controller import Controller, Subscriber, SubscriberKind, TransferReport
from .dataplane import MatchFields
from .errors import ChannelDown, MissingPeerKey, NotFound, PolicyParseError, RptRejected
from .policy import (
    ALLOW,
    DENY,
    Policy,
    RemotePolicyTransfer,
    ServiceAddress,
    make_rpt,
    parse_transfer,
)

IPv4 = ipaddress.IPv4Address


class MsgType(enum.Enum):
    RPT = "RPT"
    SESSION = "SESSION"
    BINDING = "BINDING"


@dataclass(frozen=True)
class Envelope:
    from_domain: str
    to_domain: str
    seq: int
    type: MsgType
    payload: bytes
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (f"EW {self.from_domain} {self.to_domain} SEQ {self.seq} "
                f"TYPE {self.type.value} {self.payload.hex()}").encode()

    def line(self) -> str:
        return f"{self.signing_bytes().decode()} SIG {self.signature.hex()}"

    @classmethod
    def parse(cls, line: str) -> "Envelope":
        parts = line.split()
        try:
            if (len(parts) != 10 or parts[0] != "EW" or parts[3] != "SEQ"
                    or parts[5] != "TYPE" or parts[8] != "SIG"):
                raise ValueError("layout")
            return cls(parts[1], parts[2], int(parts[4]), MsgType(parts[6]),
                       bytes.fromhex(parts[7]), bytes.fromhex(parts[9]))
        except ValueError as exc:
            raise PolicyParseError(f"bad envelope: {exc}") from None


@dataclass
class Receipt:
    envelope: Envelope
    deliver_at: int
    result: str | None = None
    report: TransferReport | None = None
    forwarded: "Receipt | None" = None

    @property
    def delivered(self) -> bool:
        return self.result is not None

    def final(self) -> "Receipt":
        """The receipt of the last hop for a relayed message."""
        r = self
        while r.forwarded is not None:
            r = r.forwarded
        return r


class EastWestChannel:
    def __init__(self, a: Controller, b: Controller, latency: int = 1):
        self.ends = {a.domain_id: a, b.domain_id: b}
        self.latency = latency
        self.active = True
        self.auto_flush = True
        self.tamper: Callable[[Envelope], Envelope] | None = None
        self._queues: dict[str, deque[Receipt]] = {a.domain_id: deque(), b.domain_id: deque()}
        self._next_seq = {a.domain_id: 1, b.domain_id: 1}
        self._last_seen = {a.domain_id: 0, b.domain_id: 0}
        self._flushing = False
        self.log: list[str] = []

    @property
    def pair(self) -> tuple[str, str]:
        return tuple(sorted(self.ends))

    def other(self, domain_id: str) -> str:
        (peer,) = [d for d in self.ends if d != domain_id]
        return peer

    def send(self, from_domain: str, kind: MsgType, payload: str, now: int | None = None) -> Receipt:
        if not self.active:
            raise ChannelDown(f"channel {'-'.join(self.pair)} is down")
        sender = self.ends[from_domain]
        now = sender.now if now is None else now
        env = Envelope(from_domain, self.other(from_domain), self._next_seq[from_domain], kind,
                       payload.encode())
        env = replace(env, signature=sender.keypair.sign(env.signing_bytes()))
        self._next_seq[from_domain] += 1
        if self.tamper is not None:
            env = self.tamper(env)
        receipt = Receipt(env, now + self.latency)
        # queue keyed by receiver
        self._queues[env.to_domain].append(receipt)
        if self.auto_flush:
            self.flush()
        return receipt

    def due(self, now: int) -> list[Receipt]:
        """Pop every envelope whose delivery tick has come, FIFO per direction."""
        out = []
        for dom in sorted(self._queues):
            q = self._queues[dom]
            while q and q[0].deliver_at <= now:
                out.append(q.popleft())
        return out

    def in_flight(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def flush(self) -> None:
        """Deliver everything queued, including replies sent during delivery."""
        if self._flushing:
            return
        self._flushing = True
        try:
            while self.in_flight():
                for receipt in self.due(float("inf")):
                    self.deliver(receipt)
        finally:
            self._flushing = False

    def deliver(self, receipt: Receipt) -> Receipt:
        env = receipt.envelope
        receiver = self.ends[env.to_domain]
        key = receiver.peer_keys.get(env.from_domain)
        if key is None or not _verify(key, env):
            receipt.result = "REJECT BadSignature"
        elif env.seq <= self._last_seen[env.to_domain]:
            receipt.result = "REJECT StaleSequence"
        else:
            self._last_seen[env.to_domain] = env.seq
            receipt.result = _dispatch(receiver, self, env, receipt)
        self.log.append(f"{env.line()} -> {receipt.result}")
        return receipt

    def close(self) -> None:
        self.active = False


def _verify(key: bytes, env: Envelope) -> bool:
    return signing.verify(key, env.signing_bytes(), env.signature)


def provision_keys(*ctrls: Controller) -> None:
    """Pre-provision every controller with every other controller's public key."""
    for a in ctrls:
        for b in ctrls:
            if a is not b:
                a.add_peer_key(b.domain_id, b.public_key)


def connect_domains(a: Controller, b: Controller, latency: int = 1) -> EastWestChannel:
    if a.peer_keys.get(b.domain_id) != b.public_key or a.domain_id not in b.peer_keys:
        raise MissingPeerKey(f"{a.domain_id} and {b.domain_id} do not hold each other's keys")
    existing = a.channels.get(b.domain_id)
    if existing is not None and existing.active:
        return existing
    ch = EastWestChannel(a, b, latency)
    a.channels[b.domain_id] = ch
    b.channels[a.domain_id] = ch
    return ch


def _next_hop(ctrl: Controller, target: str) -> EastWestChannel:
    """First channel on a shortest channel path from ``ctrl`` toward ``target``."""
    g = nx.Graph()
    seen, todo = {ctrl.domain_id}, [ctrl]
    while todo:
        c = todo.pop()
        for dom, ch in sorted(c.channels.items()):
            if ch.active:
                g.add_edge(c.domain_id, dom)
                if dom not in seen:
                    seen.add(dom)
                    todo.append(ch.ends[dom])
    try:
        path = nx.shortest_path(g, ctrl.domain_id, target)
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        raise ChannelDown(f"no channel path from {ctrl.domain_id} to {target}") from None
    return ctrl.channels[path[1]]


def send_rpt(channel: EastWestChannel, from_domain: str, rpt: RemotePolicyTransfer,
             target: str | None = None) -> Receipt:
    """Ship ``rpt`` toward ``target`` (default: the channel's far end).

    Intermediate domains relay the RPT unchanged; the origin signature is
    checked only by the final receiver.
    """
    target = target or channel.other(from_domain)
    return channel.send(from_domain, MsgType.RPT, f"FOR {target}\n{rpt.text()}")


def send_rpt_to(origin: Controller, target: str, rpt: RemotePolicyTransfer) -> Receipt:
    return send_rpt(_next_hop(origin, target), origin.domain_id, rpt, target)


# ---------------------------------------------------------------------------
# LBAC sessions


class SessionState(enum.Enum):
    PROPOSED = "Proposed"
    ACTIVE = "Active"
    TORN_DOWN = "TornDown"


@dataclass(eq=False)
class LbacSession:
    session_id: str
    provider: Controller
    requestor: Controller
    subscriber_id: str
    scope: ServiceAddress
    zone_policy: frozenset[str]
    bindings: dict[IPv4, str] = field(default_factory=dict)
    state: SessionState = SessionState.PROPOSED
    sequence: int = 0
    last_report: TransferReport | None = None
    reports: list[str] = field(default_factory=list)

    @property
    def provider_domain(self) -> str:
        return self.provider.domain_id

    @property
    def requestor_domain(self) -> str:
        return self.requestor.domain_id

    @property
    def key(self) -> tuple[str, str]:
        return (self.provider_domain, self.subscriber_id)

    def allowed_hosts(self) -> list[IPv4]:
        return sorted(ip for ip, z in self.bindings.items() if z in self.zone_policy)

    def build_rpt(self) -> RemotePolicyTransfer:
        """Deny the subscriber's address to everyone except hosts in permitted zones."""
        dst = ipaddress.IPv4Network(f"{self.scope.ip}/32")
        ports = sorted(self.scope.ports) if self.scope.ports is not None else [None]
        policies = []
        for port in ports:
            for ip in self.allowed_hosts():
                policies.append(Policy(MatchFields(src_ip=ip, dst_ip=dst, dst_port=port),
                                       ALLOW, 2, f"bound {ip}"))
            policies.append(Policy(MatchFields(dst_ip=dst, dst_port=port), DENY, 1,
                                   "unbound hosts"))
        self.sequence += 1
        rpt = make_rpt(self.provider_domain, self.subscriber_id, self.scope, policies,
                       self.sequence)
        return rpt.signed(self.provider.keypair)

    def _on_geo(self, host_ip, zone, moved) -> None:
        if self.state is not SessionState.ACTIVE:
            return
        ch = self.requestor.channels.get(self.provider_domain)
        if ch is not None and ch.active:
            ch.send(self.requestor_domain, MsgType.BINDING, _binding_payload(self))


def _binding_payload(session: LbacSession) -> str:
    lines = [f"BINDING {session.session_id}"]
    lines += [f"{ip} {zone}" for ip, zone in session.requestor.geo.bindings().items()]
    return "\n".join(lines)


def _dispatch(receiver: Controller, channel: EastWestChannel, env: Envelope,
              receipt: Receipt) -> str:
    text = env.payload.decode()
    head, _, body = text.partition("\n")
    if env.type is MsgType.RPT:
        target = head.split()[1]
        if target != receiver.domain_id:
            receipt.forwarded = send_rpt(_next_hop(receiver, target), receiver.domain_id,
                                         parse_transfer(body), target)
            return f"RELAY {target}"
        rpt = parse_transfer(body)
        report = receiver.receive_rpt(rpt)
        receipt.report = report
        session = receiver.sessions.get((rpt.origin_domain_id, rpt.subscriber_id))
        if session is not None and session.requestor is receiver:
            session.last_report = report
            session.reports.append(report.to_line())
            if report.accepted and session.state is SessionState.PROPOSED:
                session.state = SessionState.ACTIVE
        return report.to_line()
    if env.type is MsgType.SESSION:
        session = _find_session(channel.ends[env.from_domain], head.split()[1])
        if session is None:
            return "REJECT UnknownSession"
        sub = receiver.registry.get(session.subscriber_id)
        if sub is None:
            receiver.register_subscriber(Subscriber(
                session.subscriber_id, session.scope, session.provider.public_key,
                SubscriberKind.REMOTE_DOMAIN_APP, session.provider_domain))
        receiver.sessions[session.key] = session
        if session._on_geo not in receiver.location_listeners:
            receiver.location_listeners.append(session._on_geo)
        channel.send(receiver.domain_id, MsgType.BINDING, _binding_payload(session))
        return "OK"
    if env.type is MsgType.BINDING:
        session = _find_session(receiver, head.split()[1])
        if session is None:
            return "REJECT UnknownSession"
        bindings = {}
        for line in body.splitlines():
            ip, zone = line.split()
            bindings[IPv4(ip)] = zone
        session.bindings = bindings
        if session.state is not SessionState.TORN_DOWN:
            channel.send(receiver.domain_id, MsgType.RPT,
                         f"FOR {session.requestor_domain}\n{session.build_rpt().text()}")
        return "OK"
    return "REJECT UnknownType"


def _find_session(ctrl: Controller, session_id: str) -> LbacSession | None:
    return next((s for s in ctrl.sessions.values() if s.session_id == session_id), None)


def open_lbac_session(provider: Controller, requestor: Controller, subscriber_id: str,
                      zone_policy) -> LbacSession:
    """Propose a session, exchange bindings, push the RPT; Active once accepted.

    With an auto-flushing channel the whole exchange completes before return.
    """
    ch = provider.channels.get(requestor.domain_id)
    if ch is None or not ch.active:
        raise ChannelDown(f"{provider.domain_id} is not connected to {requestor.domain_id}")
    sub = provider.registry.get(subscriber_id)
    if sub is None:
        raise NotFound(f"{subscriber_id} is not registered at {provider.domain_id}")
    sid = f"{provider.domain_id}-{requestor.domain_id}-{subscriber_id}"
    session = LbacSession(sid, provider, requestor, subscriber_id, sub.service_address,
                          frozenset(zone_policy))
    provider.sessions[session.key] = session
    ch.send(provider.domain_id, MsgType.SESSION,
            f"SESSION {sid} SUB {subscriber_id} SCOPE {sub.service_address.text()} "
            f"ZONES {','.join(sorted(session.zone_policy))}")
    if ch.auto_flush and session.state is not SessionState.ACTIVE:
        raise RptRejected(session.last_report or TransferReport(False, "NoReply"))
    return session


def teardown(session: LbacSession) -> None:
    if session.state is not SessionState.ACTIVE:
        return
    try:
        session.requestor.revoke_transfer(session.subscriber_id, session.provider_domain)
    except NotFound:
        pass
    if session._on_geo in session.requestor.location_listeners:
        session.requestor.location_listeners.remove(session._on_geo)
    session.state = SessionState.TORN_DOWN
