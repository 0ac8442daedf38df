"""Application-level policies, policy transfers (PT/RPT) and their validation.

A transfer is accepted only if adding its policies to the local set changes
no decision outside the subscriber's own service address, and only makes
decisions for the subscriber's traffic stricter (Allow < RateLimit < Deny).
"Does not change" is decided by exhaustive enumeration of a bounded
:class:`HeaderUniverse`, vectorised with numpy.  A rejection carries one
concrete witness packet.
"""

from __future__ import annotations

import enum
import ipaddress
import itertools
import shlex
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import signing
from .dataplane import (
    LOCAL_PT_BAND,
    REMOTE_BAND,
    FlowRule,
    MatchFields,
    Origin,
    OriginKind,
    PacketHeader,
    Protocol,
    RuleAction,
)
from .errors import (
    BadSignature,
    BandOverflow,
    PolicyParseError,
    ScopeViolation,
    StaleSequence,
    UniverseTooLarge,
    Violation,
)

IPv4 = ipaddress.IPv4Address


class DecisionKind(enum.Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"
    RATE_LIMIT = "RATELIMIT"
    DEFAULT_DENY = "DEFAULTDENY"


_RANK = {
    DecisionKind.ALLOW: 0,
    DecisionKind.RATE_LIMIT: 1,
    DecisionKind.DENY: 2,
    DecisionKind.DEFAULT_DENY: 2,
}


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    max_new_flows: int | None = None
    window_ticks: int | None = None

    @classmethod
    def rate_limit(cls, max_new_flows: int, window_ticks: int) -> "Decision":
        return cls(DecisionKind.RATE_LIMIT, max_new_flows, window_ticks)

    @property
    def rank(self) -> int:
        return _RANK[self.kind]

    @property
    def denies(self) -> bool:
        return self.rank == 2

    def normalized(self) -> "Decision":
        return DENY if self.kind is DecisionKind.DEFAULT_DENY else self

    def text(self) -> str:
        if self.kind is DecisionKind.RATE_LIMIT:
            return f"RATELIMIT {self.max_new_flows} {self.window_ticks}"
        return self.kind.value

    def __str__(self):
        return self.text()


ALLOW = Decision(DecisionKind.ALLOW)
DENY = Decision(DecisionKind.DENY)
DEFAULT_DENY = Decision(DecisionKind.DEFAULT_DENY)


def no_looser(after: Decision, before: Decision) -> bool:
    """True if ``after`` restricts at least as much as ``before``."""
    if after.rank != before.rank:
        return after.rank > before.rank
    if after.kind is DecisionKind.RATE_LIMIT:
        return (after.max_new_flows <= before.max_new_flows
                and after.window_ticks >= before.window_ticks)
    return True


@dataclass(frozen=True)
class Policy:
    match: MatchFields
    decision: Decision
    priority: int = 0
    comment: str = ""

    def text(self) -> str:
        return format_policy(self)


def decide(policies: Sequence[Policy], pkt: PacketHeader) -> Decision:
    """Decision of the highest-priority matching policy (earliest wins ties)."""
    best = None
    for p in policies:
        if p.match.matches(pkt) and (best is None or p.priority > best.priority):
            best = p
    return DEFAULT_DENY if best is None else best.decision


def conflicts(a: Policy, b: Policy, universe: "HeaderUniverse | None" = None) -> bool:
    """Both policies can match one packet and they decide it differently.

    Without a universe the overlap test is symbolic; with one, an actual
    witness packet must exist in it.
    """
    if a.decision.normalized() == b.decision.normalized():
        return False
    if universe is None:
        return a.match.intersects(b.match)
    cols = universe.columns
    return bool(np.any(_match_mask(a.match, cols) & _match_mask(b.match, cols)))


# ---------------------------------------------------------------------------
# service address (transfer scope)


@dataclass(frozen=True)
class ServiceAddress:
    """An IPv4 host plus a port set; ``ports=None`` means every port."""

    ip: IPv4
    ports: frozenset[int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ip", IPv4(self.ip) if not isinstance(self.ip, IPv4) else self.ip)
        if self.ports is not None:
            object.__setattr__(self, "ports", frozenset(self.ports))

    @classmethod
    def parse(cls, text: str) -> "ServiceAddress":
        ip, _, ports = text.partition(":")
        if not ports or ports == "*":
            return cls(IPv4(ip), None)
        return cls(IPv4(ip), frozenset(int(p) for p in ports.split(",")))

    def text(self) -> str:
        ports = "*" if self.ports is None else ",".join(str(p) for p in sorted(self.ports))
        return f"{self.ip}:{ports}"

    def contains(self, pkt: PacketHeader) -> bool:
        return pkt.dst_ip == self.ip and (self.ports is None or pkt.dst_port in self.ports)

    def covers(self, match: MatchFields) -> bool:
        """Every header ``match`` accepts is destined to this address."""
        if match.dst_exact != self.ip:
            return False
        return self.ports is None or (match.dst_port is not None and match.dst_port in self.ports)

    def overlaps(self, other: "ServiceAddress") -> bool:
        if self.ip != other.ip:
            return False
        if self.ports is None or other.ports is None:
            return True
        return bool(self.ports & other.ports)

    def clip(self, match: MatchFields) -> list[MatchFields]:
        """Restrict ``match`` to this address; may split by port."""
        if match.dst_ip is not None and self.ip not in match.dst_ip:
            return []
        dst = ipaddress.IPv4Network(f"{self.ip}/32")
        if self.ports is None:
            return [replace(match, dst_ip=dst)]
        if match.dst_port is not None:
            return [replace(match, dst_ip=dst)] if match.dst_port in self.ports else []
        return [replace(match, dst_ip=dst, dst_port=p) for p in sorted(self.ports)]


# ---------------------------------------------------------------------------
# transfers


@dataclass(frozen=True)
class PolicyTransfer:
    """PT: a local subscriber's policies for its own domain's PEPS app."""

    subscriber_id: str
    policies: tuple[Policy, ...]
    sequence_number: int
    signature: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))

    def header_lines(self) -> list[str]:
        return [f"SUBSCRIBER {self.subscriber_id}", f"SEQ {self.sequence_number}"]

    def signing_bytes(self) -> bytes:
        lines = self.header_lines() + [format_policy(p) for p in self.policies]
        return "\n".join(lines).encode()

    def signed(self, key: signing.KeyPair):
        return replace(self, signature=key.sign(self.signing_bytes()))

    def verify(self, public_key: bytes) -> bool:
        return signing.verify(public_key, self.signing_bytes(), self.signature)

    def text(self) -> str:
        return self.signing_bytes().decode() + f"\nSIG {self.signature.hex()}\n"


@dataclass(frozen=True)
class RemotePolicyTransfer(PolicyTransfer):
    """RPT: policies from a service in ``origin_domain_id``, scoped to its address."""

    origin_domain_id: str = ""
    subscriber_service_address: ServiceAddress | None = None

    def header_lines(self) -> list[str]:
        return [
            f"SUBSCRIBER {self.subscriber_id}",
            f"DOMAIN {self.origin_domain_id}",
            f"SCOPE {self.subscriber_service_address.text()}",
            f"SEQ {self.sequence_number}",
        ]


def make_rpt(origin_domain_id: str, subscriber_id: str, scope: ServiceAddress,
             policies: Iterable[Policy], sequence_number: int) -> RemotePolicyTransfer:
    return RemotePolicyTransfer(
        subscriber_id=subscriber_id,
        policies=tuple(policies),
        sequence_number=sequence_number,
        origin_domain_id=origin_domain_id,
        subscriber_service_address=scope,
    )


# ---------------------------------------------------------------------------
# text formats


def _parse_field(key: str, value: str):
    if value == "*":
        return None
    if key == "src":
        return IPv4(value)
    if key == "dst":
        return ipaddress.IPv4Network(value, strict=False)
    if key in ("sport", "dport"):
        port = int(value)
        if not 0 <= port <= 65535:
            raise ValueError(f"port out of range: {port}")
        return port
    if key == "proto":
        return Protocol.parse(value)
    raise ValueError(f"unknown field {key!r}")


_FIELD_NAMES = {"src": "src_ip", "dst": "dst_ip", "sport": "src_port",
                "dport": "dst_port", "proto": "protocol"}


def parse_match(tokens: Iterable[str]) -> MatchFields:
    kwargs = {}
    for tok in tokens:
        key, eq, value = tok.partition("=")
        if not eq or key not in _FIELD_NAMES:
            raise ValueError(f"bad match field {tok!r}")
        kwargs[_FIELD_NAMES[key]] = _parse_field(key, value)
    return MatchFields(**kwargs)


def parse_policy(line: str, lineno: int | None = None) -> Policy:
    """Parse ``PRIO <n> <ALLOW|DENY|RATELIMIT k w> src=.. dst=.. ... [# comment]``."""
    body, _, comment = line.partition("#")
    toks = body.split()
    try:
        if len(toks) < 3 or toks[0] != "PRIO":
            raise ValueError("expected 'PRIO <n> <decision> ...'")
        prio = int(toks[1])
        word = toks[2].upper()
        rest = toks[3:]
        if word == "ALLOW":
            decision = ALLOW
        elif word == "DENY":
            decision = DENY
        elif word == "RATELIMIT":
            decision = Decision.rate_limit(int(rest[0]), int(rest[1]))
            if decision.max_new_flows < 0 or decision.window_ticks < 1:
                raise ValueError("bad rate limit")
            rest = rest[2:]
        else:
            raise ValueError(f"unknown decision {toks[2]!r}")
        match = parse_match(rest)
    except (ValueError, IndexError) as exc:
        raise PolicyParseError(str(exc), lineno) from None
    return Policy(match, decision, prio, comment.strip())


def format_policy(p: Policy) -> str:
    out = f"PRIO {p.priority} {p.decision.text()} {p.match.text()}"
    return f"{out} # {p.comment}" if p.comment else out


def _content_lines(text: str) -> Iterator[tuple[int, str]]:
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield n, line


def parse_policies(text: str) -> list[Policy]:
    return [parse_policy(line, n) for n, line in _content_lines(text)]


def format_policies(policies: Iterable[Policy]) -> str:
    return "".join(format_policy(p) + "\n" for p in policies)


def parse_transfer(text: str) -> PolicyTransfer:
    """Parse a PT or RPT envelope; an RPT is recognised by its DOMAIN line."""
    head: dict[str, str] = {}
    policies: list[Policy] = []
    sig = b""
    for n, line in _content_lines(text):
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if word == "PRIO":
                policies.append(parse_policy(line, n))
            elif word == "SIG":
                sig = bytes.fromhex(rest)
            elif word in ("SUBSCRIBER", "DOMAIN", "SCOPE", "SEQ"):
                if word in head:
                    raise ValueError(f"duplicate {word}")
                head[word] = rest
            else:
                raise ValueError(f"unexpected line {line!r}")
        except ValueError as exc:
            raise PolicyParseError(str(exc), n) from None
    try:
        sub = head["SUBSCRIBER"]
        seq = int(head["SEQ"])
        if "DOMAIN" in head:
            scope = ServiceAddress.parse(head["SCOPE"])
            return RemotePolicyTransfer(sub, tuple(policies), seq, sig,
                                        origin_domain_id=head["DOMAIN"],
                                        subscriber_service_address=scope)
        if "SCOPE" in head:
            raise ValueError("SCOPE without DOMAIN")
    except KeyError as exc:
        raise PolicyParseError(f"missing {exc.args[0]} line") from None
    except ValueError as exc:
        raise PolicyParseError(str(exc)) from None
    return PolicyTransfer(sub, tuple(policies), seq, sig)


# ---------------------------------------------------------------------------
# header universe


@dataclass(frozen=True)
class HeaderUniverse:
    """Finite header space enumerated by the validation oracle.

    Packets are produced in ``itertools.product`` order over
    (src, dst, sport, dport, proto).
    """

    src_ips: tuple[IPv4, ...]
    dst_ips: tuple[IPv4, ...]
    src_ports: tuple[int, ...]
    dst_ports: tuple[int, ...]
    protocols: tuple[Protocol, ...] = (Protocol.TCP, Protocol.UDP)
    cap: int = 10**6

    def __post_init__(self):
        object.__setattr__(self, "src_ips", tuple(sorted({IPv4(x) for x in self.src_ips})))
        object.__setattr__(self, "dst_ips", tuple(sorted({IPv4(x) for x in self.dst_ips})))
        object.__setattr__(self, "src_ports", tuple(sorted(set(self.src_ports))))
        object.__setattr__(self, "dst_ports", tuple(sorted(set(self.dst_ports))))
        object.__setattr__(self, "protocols",
                           tuple(sorted({Protocol(p) for p in self.protocols})))

    @property
    def dims(self) -> tuple[int, ...]:
        return (len(self.src_ips), len(self.dst_ips), len(self.src_ports),
                len(self.dst_ports), len(self.protocols))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def check_size(self) -> None:
        if self.size > self.cap:
            raise UniverseTooLarge(f"universe has {self.size} packets, cap is {self.cap}")

    def packets(self) -> Iterator[PacketHeader]:
        for s, d, sp, dp, pr in itertools.product(self.src_ips, self.dst_ips, self.src_ports,
                                                  self.dst_ports, self.protocols):
            yield PacketHeader(s, d, sp, dp, pr)

    def packet(self, index: int) -> PacketHeader:
        s, d, sp, dp, pr = np.unravel_index(index, self.dims)
        return PacketHeader(self.src_ips[s], self.dst_ips[d], self.src_ports[sp],
                            self.dst_ports[dp], self.protocols[pr])

    @cached_property
    def columns(self) -> dict[str, np.ndarray]:
        self.check_size()
        idx = np.indices(self.dims).reshape(len(self.dims), -1)
        values = (
            np.array([int(ip) for ip in self.src_ips], dtype=np.int64),
            np.array([int(ip) for ip in self.dst_ips], dtype=np.int64),
            np.array(self.src_ports, dtype=np.int64),
            np.array(self.dst_ports, dtype=np.int64),
            np.array([int(p) for p in self.protocols], dtype=np.int64),
        )
        names = ("src", "dst", "sport", "dport", "proto")
        return {n: v[i] for n, v, i in zip(names, values, idx)}

    def extended_with(self, policies: Iterable[Policy] = (),
                      scopes: Iterable[ServiceAddress] = ()) -> "HeaderUniverse":
        """Add every concrete value mentioned by ``policies`` and ``scopes``."""
        src, dst = set(self.src_ips), set(self.dst_ips)
        sp, dp, pr = set(self.src_ports), set(self.dst_ports), set(self.protocols)
        for p in policies:
            m = p.match
            if m.src_ip is not None:
                src.add(m.src_ip)
            if m.dst_ip is not None:
                dst.add(m.dst_ip.network_address)
            if m.src_port is not None:
                sp.add(m.src_port)
            if m.dst_port is not None:
                dp.add(m.dst_port)
            if m.protocol is not None:
                pr.add(m.protocol)
        for s in scopes:
            dst.add(s.ip)
            dp.update(s.ports or ())
        return HeaderUniverse(tuple(src), tuple(dst), tuple(sp), tuple(dp), tuple(pr), self.cap)

    def text(self) -> str:
        return (
            "src " + " ".join(map(str, self.src_ips)) + "\n"
            "dst " + " ".join(map(str, self.dst_ips)) + "\n"
            "sport " + " ".join(map(str, self.src_ports)) + "\n"
            "dport " + " ".join(map(str, self.dst_ports)) + "\n"
            "proto " + " ".join(p.name.lower() for p in self.protocols) + "\n"
            f"cap {self.cap}\n"
        )

    @classmethod
    def parse(cls, text: str) -> "HeaderUniverse":
        fields: dict[str, list[str]] = {}
        for n, line in _content_lines(text):
            key, *vals = shlex.split(line, comments=True)
            if key not in ("src", "dst", "sport", "dport", "proto", "cap") or not vals:
                raise PolicyParseError(f"bad universe line {line!r}", n)
            fields.setdefault(key, []).extend(vals)
        try:
            return cls(
                tuple(IPv4(x) for x in fields["src"]),
                tuple(IPv4(x) for x in fields["dst"]),
                tuple(int(x) for x in fields["sport"]),
                tuple(int(x) for x in fields["dport"]),
                tuple(Protocol.parse(x) for x in fields.get("proto", ["tcp", "udp"])),
                int(fields.get("cap", [10**6])[0]),
            )
        except KeyError as exc:
            raise PolicyParseError(f"universe missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise PolicyParseError(str(exc)) from None


# ---------------------------------------------------------------------------
# vectorised decision over a universe

_CODE = {DecisionKind.DEFAULT_DENY: 0, DecisionKind.ALLOW: 1, DecisionKind.DENY: 2,
         DecisionKind.RATE_LIMIT: 3}
_RANK_OF_CODE = np.array([2, 0, 2, 1])


def _match_mask(m: MatchFields, cols: dict[str, np.ndarray]) -> np.ndarray:
    mask = np.ones(len(cols["src"]), dtype=bool)
    if m.src_ip is not None:
        mask &= cols["src"] == int(m.src_ip)
    if m.dst_ip is not None:
        net = int(m.dst_ip.network_address)
        netmask = int(m.dst_ip.netmask)
        mask &= (cols["dst"] & netmask) == net
    if m.src_port is not None:
        mask &= cols["sport"] == m.src_port
    if m.dst_port is not None:
        mask &= cols["dport"] == m.dst_port
    if m.protocol is not None:
        mask &= cols["proto"] == int(m.protocol)
    return mask


def decide_order(policies: Sequence[Policy]) -> list[int]:
    """Indexes of ``policies`` in evaluation order."""
    return sorted(range(len(policies)), key=lambda i: (-policies[i].priority, i))


def decide_universe(policies: Sequence[Policy],
                    universe: HeaderUniverse) -> tuple[np.ndarray, np.ndarray]:
    """Decision codes and winning policy index (-1: none) for every universe packet."""
    cols = universe.columns
    n = len(cols["src"])
    codes = np.zeros(n, dtype=np.int8)
    winner = np.full(n, -1, dtype=np.int64)
    open_ = np.ones(n, dtype=bool)
    for i in decide_order(policies):
        hit = open_ & _match_mask(policies[i].match, cols)
        if hit.any():
            codes[hit] = _CODE[policies[i].decision.kind]
            winner[hit] = i
            open_ &= ~hit
            if not open_.any():
                break
    return codes, winner


def _scope_mask(scope: ServiceAddress, cols) -> np.ndarray:
    mask = cols["dst"] == int(scope.ip)
    if scope.ports is not None:
        mask &= np.isin(cols["dport"], sorted(scope.ports))
    return mask


def violation_mask(local: Sequence[Policy], extra: Sequence[Policy],
                   universe: HeaderUniverse, scope: ServiceAddress) -> np.ndarray:
    """Packets on which ``local + extra`` breaks the refinement-only rule."""
    combined = list(local) + list(extra)
    before, wb = decide_universe(local, universe)
    after, wa = decide_universe(combined, universe)
    limits = np.array([[p.decision.max_new_flows or 0, p.decision.window_ticks or 0]
                       for p in combined] + [[0, 0]], dtype=np.int64)
    lb, la = limits[wb], limits[wa]          # winner -1 picks the padding row
    rank_b, rank_a = _RANK_OF_CODE[before], _RANK_OF_CODE[after]
    both_rl = (before == 3) & (after == 3)

    same = (rank_a == rank_b) & ~(both_rl & np.any(lb != la, axis=1))
    stricter_rl = (la[:, 0] <= lb[:, 0]) & (la[:, 1] >= lb[:, 1])
    tighter = (rank_a > rank_b) | ((rank_a == rank_b) & (~both_rl | stricter_rl))

    inside = _scope_mask(scope, universe.columns)
    return np.where(inside, ~tighter, ~same)


def check_refinement(local: Sequence[Policy], extra: Sequence[Policy],
                     universe: HeaderUniverse, scope: ServiceAddress) -> None:
    """Raise :class:`Violation` with the first offending packet, if any."""
    bad = violation_mask(local, extra, universe, scope)
    if bad.any():
        pkt = universe.packet(int(np.argmax(bad)))
        raise Violation(pkt, decide(local, pkt), decide(list(local) + list(extra), pkt))


def _check_envelope(transfer: PolicyTransfer, public_key, last_sequence) -> None:
    if public_key is not None and not transfer.verify(public_key):
        raise BadSignature(f"signature check failed for {transfer.subscriber_id}")
    if last_sequence is not None and transfer.sequence_number <= last_sequence:
        raise StaleSequence(
            f"sequence {transfer.sequence_number} not above {last_sequence}")


def validate_pt(local: Sequence[Policy], pt: PolicyTransfer, universe: HeaderUniverse,
                scope: ServiceAddress, *, public_key: bytes | None = None,
                last_sequence: int | None = None) -> None:
    """Accept (return) or reject (raise) a PT for subscriber address ``scope``.

    The envelope checks run only when ``public_key`` / ``last_sequence`` are given.
    """
    _check_envelope(pt, public_key, last_sequence)
    universe.check_size()
    check_refinement(local, pt.policies, universe, scope)


def validate_rpt(local: Sequence[Policy], rpt: RemotePolicyTransfer, universe: HeaderUniverse,
                 *, public_key: bytes | None = None,
                 last_sequence: int | None = None) -> None:
    _check_envelope(rpt, public_key, last_sequence)
    scope = rpt.subscriber_service_address
    for i, p in enumerate(rpt.policies):
        if not scope.covers(p.match):
            raise ScopeViolation(i, f"policy {i} ({format_policy(p)}) leaves scope {scope.text()}")
    universe.check_size()
    check_refinement(local, rpt.policies, universe, scope)


# ---------------------------------------------------------------------------
# composition and compilation


@dataclass
class ComposedPolicySet:
    """Local policies plus the accepted transfers, one per origin."""

    local: list[Policy] = field(default_factory=list)
    # subscriber_id -> (PT, scope)
    accepted_pt: dict[str, tuple[PolicyTransfer, ServiceAddress]] = field(default_factory=dict)
    # (domain_id, subscriber_id) -> RPT
    accepted_rpt: dict[tuple[str, str], RemotePolicyTransfer] = field(default_factory=dict)


def compile_transfer(policies: Sequence[Policy], origin: Origin, scope: ServiceAddress,
                     last_table_index: int) -> list[FlowRule]:
    """Turn one transfer's policies into PEPS-table rules.

    Priorities descend from the top of the origin's band in evaluation order.
    Deny -> Drop, RateLimit -> RateLimit; an Allow yields a PASS rule only when
    it shadows a stricter policy later in the same transfer.  Every match is
    clipped to ``scope`` so no rule can touch another destination.
    """
    lo, hi = REMOTE_BAND if origin.kind is OriginKind.REMOTE_RPT else LOCAL_PT_BAND
    if len(policies) > hi - lo + 1:
        raise BandOverflow(f"{len(policies)} policies exceed the {hi - lo + 1}-wide band")
    order = decide_order(policies)
    rules: list[FlowRule] = []
    for pos, i in enumerate(order):
        p = policies[i]
        kind = p.decision.kind
        if kind is DecisionKind.ALLOW:
            later = (policies[j] for j in order[pos + 1:])
            if not any(q.decision.kind is not DecisionKind.ALLOW
                       and q.match.intersects(p.match) for q in later):
                continue
            action = RuleAction.passthrough()
        elif kind is DecisionKind.RATE_LIMIT:
            action = RuleAction.rate_limit(p.decision.max_new_flows, p.decision.window_ticks)
        else:
            action = RuleAction.drop()
        for m in scope.clip(p.match):
            rules.append(FlowRule(m, action, hi - pos, last_table_index, origin))
    return rules


def compile_to_rules(accepted: ComposedPolicySet, last_table_index: int) -> list[FlowRule]:
    rules: list[FlowRule] = []
    for sub, (pt, scope) in sorted(accepted.accepted_pt.items()):
        rules += compile_transfer(pt.policies, Origin.pt(sub), scope, last_table_index)
    for (dom, sub), rpt in sorted(accepted.accepted_rpt.items()):
        rules += compile_transfer(rpt.policies, Origin.rpt(dom, sub),
                                  rpt.subscriber_service_address, last_table_index)
    return rules


def compile_local(policies: Sequence[Policy], forward_port: int = 1,
                  table_index: int = 0) -> list[FlowRule]:
    """Proactive LocalCore rules realising ``policies`` plus a default-deny floor."""
    rules = []
    top = 60000
    for pos, i in enumerate(decide_order(policies)):
        p = policies[i]
        kind = p.decision.kind
        if kind is DecisionKind.ALLOW:
            action = RuleAction.forward(forward_port)
        elif kind is DecisionKind.RATE_LIMIT:
            action = RuleAction.rate_limit(p.decision.max_new_flows, p.decision.window_ticks,
                                           forward_port)
        else:
            action = RuleAction.drop()
        rules.append(FlowRule(p.match, action, max(top - pos, 1), table_index))
    rules.append(FlowRule(MatchFields(), RuleAction.drop(), 0, table_index))
    return rules
