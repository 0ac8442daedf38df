"""SDN-based location tracking and the signed location-ticket protocol.

A host's location is the (switch, port) of its latest packet_in, mapped to a
zone by static configuration.  Tickets bind a host's IP and public key to the
zone it was seen in at a given tick:

    LTR ip=<ip> key=<hex> t=<tick> sig=<hex>              (host-signed request)
    LT  ip=<ip> key=<hex> t=<tick> zone=<id> dom=<id> sig=<hex>   (controller-signed)

The bytes signed are the line without its trailing `` sig=`` field.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field, replace

from . import signing
from .dataplane import FlowRule, MatchFields, RuleAction
from .errors import (
    BadSignature,
    IpMismatch,
    NotAttached,
    PolicyParseError,
    StaleRequest,
    UnknownHost,
    UnmappedPort,
)

IPv4 = ipaddress.IPv4Address

LTR_FRESHNESS = 10
LT_MAX_AGE = 50


class SecurityClass(enum.Enum):
    SECURE = "secure"
    NON_SECURE = "nonsecure"


@dataclass(frozen=True)
class LocationZone:
    zone_id: str
    label: str = ""
    security: SecurityClass = SecurityClass.NON_SECURE


@dataclass(frozen=True)
class Attachment:
    switch_id: str
    port_id: int
    last_seen: int


@dataclass(frozen=True)
class Sighting:
    zone: LocationZone
    moved: bool


@dataclass
class GeoLocationTable:
    zone_map: dict[tuple[str, int], LocationZone] = field(default_factory=dict)
    attachment: dict[IPv4, Attachment] = field(default_factory=dict)

    def zone_of(self, host_ip) -> LocationZone | None:
        att = self.attachment.get(IPv4(host_ip))
        return None if att is None else self.zone_map[(att.switch_id, att.port_id)]

    def bindings(self) -> dict[IPv4, str]:
        """host IP -> zone id, for every located host."""
        return {ip: self.zone_map[(a.switch_id, a.port_id)].zone_id
                for ip, a in sorted(self.attachment.items())}


@dataclass(frozen=True)
class PacketInEvent:
    switch_id: str
    port_id: int
    src_ip: IPv4
    tick: int = 0


def track_host(geo: GeoLocationTable, event: PacketInEvent) -> Sighting:
    """Record where ``event.src_ip`` was last seen; flag a zone change."""
    key = (event.switch_id, event.port_id)
    zone = geo.zone_map.get(key)
    if zone is None:
        raise UnmappedPort(f"{event.switch_id}:{event.port_id} has no zone")
    ip = IPv4(event.src_ip)
    prev = geo.attachment.get(ip)
    moved = prev is not None and geo.zone_map[(prev.switch_id, prev.port_id)] != zone
    geo.attachment[ip] = Attachment(event.switch_id, event.port_id, event.tick)
    return Sighting(zone, moved)


PIN_ALLOW_PRIO = 300
PIN_IP_LOCK_PRIO = 200
PIN_PORT_LOCK_PRIO = 100


def pin_port(ctrl, host_ip, switch_id: str, port_id: int) -> list[FlowRule]:
    """Bind ``host_ip`` to its port on ``switch_id``.

    Installs, in table 0: the host's own traffic on that port continues to
    table 1; any other source on that port is dropped; the host's IP arriving
    on any other port of the switch is dropped.  The controller also refuses
    packet_ins claiming the IP from anywhere else.
    """
    ip = IPv4(host_ip)
    att = ctrl.geo.attachment.get(ip)
    if att is None or (att.switch_id, att.port_id) != (switch_id, port_id):
        raise NotAttached(f"{ip} is not attached at {switch_id}:{port_id}")
    pipe = ctrl.switch(switch_id).pipeline
    rules = [
        FlowRule(MatchFields(src_ip=ip, in_port=port_id), RuleAction.goto(1), PIN_ALLOW_PRIO, 0),
        FlowRule(MatchFields(src_ip=ip), RuleAction.drop(), PIN_IP_LOCK_PRIO, 0),
        FlowRule(MatchFields(in_port=port_id), RuleAction.drop(), PIN_PORT_LOCK_PRIO, 0),
    ]
    installed = [pipe.install(r) for r in rules]
    ctrl.pins[ip] = (switch_id, port_id)
    return installed


# ---------------------------------------------------------------------------
# tickets


def _fields(line: str, tag: str) -> dict[str, str]:
    parts = line.split()
    if not parts or parts[0] != tag:
        raise PolicyParseError(f"expected a {tag} line")
    out = {}
    for tok in parts[1:]:
        k, eq, v = tok.partition("=")
        if not eq or k in out:
            raise PolicyParseError(f"bad field {tok!r}")
        out[k] = v
    return out


@dataclass(frozen=True)
class LocationTicketRequest:
    requestor_ip: IPv4
    requestor_public_key: bytes
    timestamp: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (f"LTR ip={self.requestor_ip} key={self.requestor_public_key.hex()} "
                f"t={self.timestamp}").encode()

    def signed(self, key: signing.KeyPair) -> "LocationTicketRequest":
        return replace(self, signature=key.sign(self.signing_bytes()))

    def line(self) -> str:
        return f"{self.signing_bytes().decode()} sig={self.signature.hex()}"

    @classmethod
    def parse(cls, line: str) -> "LocationTicketRequest":
        f = _fields(line.strip(), "LTR")
        try:
            return cls(IPv4(f["ip"]), bytes.fromhex(f["key"]), int(f["t"]),
                       bytes.fromhex(f.get("sig", "")))
        except (KeyError, ValueError) as exc:
            raise PolicyParseError(f"bad LTR: {exc}") from None


def make_ltr(ip, key: signing.KeyPair, now: int) -> LocationTicketRequest:
    return LocationTicketRequest(IPv4(ip), key.public_key, now).signed(key)


@dataclass(frozen=True)
class LocationTicket:
    requestor_ip: IPv4
    requestor_public_key: bytes
    timestamp: int
    zone_id: str
    issuer_domain_id: str
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (f"LT ip={self.requestor_ip} key={self.requestor_public_key.hex()} "
                f"t={self.timestamp} zone={self.zone_id} dom={self.issuer_domain_id}").encode()

    def line(self) -> str:
        return f"{self.signing_bytes().decode()} sig={self.signature.hex()}"

    @classmethod
    def parse(cls, line: str) -> "LocationTicket":
        f = _fields(line.strip(), "LT")
        try:
            return cls(IPv4(f["ip"]), bytes.fromhex(f["key"]), int(f["t"]), f["zone"], f["dom"],
                       bytes.fromhex(f.get("sig", "")))
        except (KeyError, ValueError) as exc:
            raise PolicyParseError(f"bad LT: {exc}") from None


def issue_ticket(ctrl, ltr: LocationTicketRequest, observed_src_ip,
                 now: int | None = None, freshness: int = LTR_FRESHNESS) -> LocationTicket:
    """Answer an LTR seen with source address ``observed_src_ip``."""
    now = ctrl.now if now is None else now
    if not signing.verify(ltr.requestor_public_key, ltr.signing_bytes(), ltr.signature):
        raise BadSignature("LTR signature does not verify under the claimed key")
    if ltr.requestor_ip != IPv4(observed_src_ip):
        raise IpMismatch(f"LTR claims {ltr.requestor_ip}, packet came from {observed_src_ip}")
    if abs(now - ltr.timestamp) > freshness:
        raise StaleRequest(f"LTR time {ltr.timestamp} too far from {now}")
    zone = ctrl.geo.zone_of(ltr.requestor_ip)
    if zone is None:
        raise UnknownHost(f"{ltr.requestor_ip} has not been located")
    lt = LocationTicket(ltr.requestor_ip, ltr.requestor_public_key, now, zone.zone_id,
                        ctrl.domain_id)
    return replace(lt, signature=ctrl.keypair.sign(lt.signing_bytes()))


class TicketReject(enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"
    IP_MISMATCH = "IpMismatch"
    KEY_MISMATCH = "KeyMismatch"


@dataclass(frozen=True)
class TicketCheck:
    accepted: bool
    reason: TicketReject | None = None

    def line(self) -> str:
        return "ACCEPT" if self.accepted else f"REJECT {self.reason.value}"


def verify_ticket(lt: LocationTicket, issuer_public_key: bytes, now: int, max_age: int = LT_MAX_AGE,
                  expected_ip=None, expected_key: bytes | None = None) -> TicketCheck:
    """Check an LT presented by ``expected_ip`` holding ``expected_key``.

    The signature is checked first, so any tampered field reports BadSignature.
    """
    if not signing.verify(issuer_public_key, lt.signing_bytes(), lt.signature):
        return TicketCheck(False, TicketReject.BAD_SIGNATURE)
    if now - lt.timestamp > max_age or now < lt.timestamp:
        return TicketCheck(False, TicketReject.EXPIRED)
    if expected_ip is not None and lt.requestor_ip != IPv4(expected_ip):
        return TicketCheck(False, TicketReject.IP_MISMATCH)
    if expected_key is not None and lt.requestor_public_key != expected_key:
        return TicketCheck(False, TicketReject.KEY_MISMATCH)
    return TicketCheck(True)
