"""OpenFlow-style switch model: header matching, priority resolution and
multi-table pipelines whose last table is reserved for PEPS-derived rules.

Tables ``0 .. n-2`` hold only ``LocalCore`` rules and are evaluated first.
Only a packet that local processing still allows reaches table ``n-1``, which
holds rules compiled from policy transfers (``LocalPT`` / ``RemoteRPT``).
A miss in the PEPS table adds no restriction.
"""

from __future__ import annotations

import bisect
import enum
import ipaddress
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator

from .errors import (
    InvalidRule,
    MalformedPipeline,
    PriorityBandViolation,
    TablePlacementViolation,
)

IPv4 = ipaddress.IPv4Address

REMOTE_BAND = (0, 9999)
LOCAL_PT_BAND = (10000, 19999)
MAX_PRIORITY = 65535


class Protocol(enum.IntEnum):
    ICMP = 1
    TCP = 6
    UDP = 17

    @classmethod
    def parse(cls, text: str) -> "Protocol":
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown protocol {text!r}") from None


def _ip(value) -> IPv4:
    return value if isinstance(value, IPv4) else IPv4(value)


def eth_for_ip(ip) -> int:
    """Locally administered MAC derived from an IPv4 address."""
    return 0x02_00_00_00_00_00 | int(_ip(ip))


@dataclass(frozen=True)
class PacketHeader:
    src_ip: IPv4
    dst_ip: IPv4
    src_port: int
    dst_port: int
    protocol: Protocol = Protocol.TCP
    in_port: int = 0
    eth_src: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "src_ip", _ip(self.src_ip))
        object.__setattr__(self, "dst_ip", _ip(self.dst_ip))
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.eth_src is None:
            object.__setattr__(self, "eth_src", eth_for_ip(self.src_ip))
        for name in ("src_port", "dst_port"):
            v = getattr(self, name)
            if not 0 <= v <= 65535:
                raise ValueError(f"{name} out of range: {v}")
        if self.in_port < 0:
            raise ValueError("in_port must be >= 0")

    @property
    def five_tuple(self) -> tuple:
        return (self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.protocol)

    def at_port(self, in_port: int) -> "PacketHeader":
        return replace(self, in_port=in_port)

    def tuple_text(self) -> str:
        return (f"{self.src_ip}:{self.src_port}->{self.dst_ip}:{self.dst_port}"
                f"/{self.protocol.name.lower()}")


@dataclass(frozen=True)
class MatchFields:
    """One optional predicate per header field; ``None`` is a wildcard."""

    src_ip: IPv4 | None = None
    dst_ip: ipaddress.IPv4Network | None = None
    src_port: int | None = None
    dst_port: int | None = None
    protocol: Protocol | None = None
    in_port: int | None = None
    eth_src: int | None = None

    def __post_init__(self):
        if self.src_ip is not None:
            object.__setattr__(self, "src_ip", _ip(self.src_ip))
        if self.dst_ip is not None and not isinstance(self.dst_ip, ipaddress.IPv4Network):
            object.__setattr__(self, "dst_ip", ipaddress.IPv4Network(self.dst_ip, strict=False))
        if self.protocol is not None:
            object.__setattr__(self, "protocol", Protocol(self.protocol))

    @property
    def dst_exact(self) -> IPv4 | None:
        if self.dst_ip is not None and self.dst_ip.prefixlen == 32:
            return self.dst_ip.network_address
        return None

    def matches(self, pkt: PacketHeader) -> bool:
        return (
            (self.src_ip is None or self.src_ip == pkt.src_ip)
            and (self.dst_ip is None or pkt.dst_ip in self.dst_ip)
            and (self.src_port is None or self.src_port == pkt.src_port)
            and (self.dst_port is None or self.dst_port == pkt.dst_port)
            and (self.protocol is None or self.protocol == pkt.protocol)
            and (self.in_port is None or self.in_port == pkt.in_port)
            and (self.eth_src is None or self.eth_src == pkt.eth_src)
        )

    def intersects(self, other: "MatchFields") -> bool:
        """Symbolic test: does some header satisfy both predicates?"""
        for name in ("src_ip", "src_port", "dst_port", "protocol", "in_port", "eth_src"):
            a, b = getattr(self, name), getattr(other, name)
            if a is not None and b is not None and a != b:
                return False
        if self.dst_ip is not None and other.dst_ip is not None:
            return self.dst_ip.overlaps(other.dst_ip)
        return True

    def text(self) -> str:
        def show(v, fmt=str):
            return "*" if v is None else fmt(v)

        def dst_fmt(net):
            return str(net.network_address) if net.prefixlen == 32 else str(net)

        out = (f"src={show(self.src_ip)} dst={show(self.dst_ip, dst_fmt)} "
               f"sport={show(self.src_port)} dport={show(self.dst_port)} "
               f"proto={show(self.protocol, lambda p: p.name.lower())}")
        if self.in_port is not None:
            out += f" in_port={self.in_port}"
        if self.eth_src is not None:
            out += f" eth_src={self.eth_src:012x}"
        return out


WILDCARD = MatchFields()


class ActionKind(enum.Enum):
    DROP = "DROP"
    FORWARD = "FORWARD"
    GOTO_TABLE = "GOTO"
    RATE_LIMIT = "RATELIMIT"
    SEND_TO_CONTROLLER = "CONTROLLER"
    PASS = "PASS"


@dataclass(frozen=True)
class RuleAction:
    """What a matching rule does.

    ``PASS`` is only meaningful in the PEPS table: the packet leaves with the
    verdict local processing already produced.  A ``RATE_LIMIT`` rule with a
    ``port`` admits a packet and forwards it there; without one (PEPS table)
    an admitted packet keeps its pending verdict.
    """

    kind: ActionKind
    port: int | None = None
    table: int | None = None
    max_new_flows: int | None = None
    window_ticks: int | None = None

    @classmethod
    def drop(cls):
        return cls(ActionKind.DROP)

    @classmethod
    def forward(cls, port: int):
        return cls(ActionKind.FORWARD, port=port)

    @classmethod
    def goto(cls, table: int):
        return cls(ActionKind.GOTO_TABLE, table=table)

    @classmethod
    def rate_limit(cls, max_new_flows: int, window_ticks: int, port: int | None = None):
        if max_new_flows < 0 or window_ticks < 1:
            raise ValueError("rate limit needs max_new_flows >= 0 and window_ticks >= 1")
        return cls(ActionKind.RATE_LIMIT, port=port, max_new_flows=max_new_flows,
                   window_ticks=window_ticks)

    @classmethod
    def to_controller(cls):
        return cls(ActionKind.SEND_TO_CONTROLLER)

    @classmethod
    def passthrough(cls):
        return cls(ActionKind.PASS)

    def text(self) -> str:
        k = self.kind
        if k is ActionKind.FORWARD:
            return f"FORWARD:{self.port}"
        if k is ActionKind.GOTO_TABLE:
            return f"GOTO:{self.table}"
        if k is ActionKind.RATE_LIMIT:
            tail = f":{self.port}" if self.port is not None else ""
            return f"RATELIMIT:{self.max_new_flows}/{self.window_ticks}{tail}"
        return k.value


class OriginKind(enum.Enum):
    LOCAL_CORE = "LocalCore"
    LOCAL_PT = "LocalPT"
    REMOTE_RPT = "RemoteRPT"


@dataclass(frozen=True)
class Origin:
    kind: OriginKind
    subscriber_id: str | None = None
    domain_id: str | None = None

    @classmethod
    def core(cls):
        return cls(OriginKind.LOCAL_CORE)

    @classmethod
    def pt(cls, subscriber_id: str):
        return cls(OriginKind.LOCAL_PT, subscriber_id=subscriber_id)

    @classmethod
    def rpt(cls, domain_id: str, subscriber_id: str):
        return cls(OriginKind.REMOTE_RPT, subscriber_id=subscriber_id, domain_id=domain_id)

    @property
    def is_peps(self) -> bool:
        return self.kind is not OriginKind.LOCAL_CORE

    def text(self) -> str:
        if self.kind is OriginKind.LOCAL_PT:
            return f"LocalPT({self.subscriber_id})"
        if self.kind is OriginKind.REMOTE_RPT:
            return f"RemoteRPT({self.domain_id},{self.subscriber_id})"
        return "LocalCore"


@dataclass(frozen=True)
class OriginFilter:
    """Selects origins; ``None`` fields are wildcards."""

    kind: OriginKind
    subscriber_id: str | None = None
    domain_id: str | None = None

    def __call__(self, origin: Origin) -> bool:
        return (
            origin.kind is self.kind
            and (self.subscriber_id is None or origin.subscriber_id == self.subscriber_id)
            and (self.domain_id is None or origin.domain_id == self.domain_id)
        )


@dataclass(frozen=True)
class FlowRule:
    match: MatchFields
    action: RuleAction
    priority: int
    table_index: int
    origin: Origin = field(default_factory=Origin.core)
    rule_id: int | None = None

    def text(self) -> str:
        return (f"RULE table={self.table_index} prio={self.priority} "
                f"origin={self.origin.text()} action={self.action.text()} {self.match.text()}")


def _order(rule: FlowRule):
    return (-rule.priority, rule.rule_id if rule.rule_id is not None else float("inf"))


def _exact_key(m: MatchFields):
    """Hash key for fully specified matches; None when any field is wild."""
    if (m.src_ip is None or m.dst_exact is None or m.src_port is None or m.dst_port is None
            or m.protocol is None or m.in_port is None or m.eth_src is not None):
        return None
    return (m.src_ip, m.dst_exact, m.src_port, m.dst_port, m.protocol, m.in_port)


class FlowTable:
    """Rules kept in evaluation order: priority descending, rule_id ascending.

    Fully specified matches are also indexed by header so reactive per-flow
    rules do not slow lookups down.
    """

    def __init__(self, index: int):
        self.index = index
        self._rules: list[FlowRule] = []
        self._wild: list[FlowRule] = []
        self._exact: dict[tuple, list[FlowRule]] = {}

    def __iter__(self) -> Iterator[FlowRule]:
        return iter(self._rules)

    def __len__(self):
        return len(self._rules)

    def add(self, rule: FlowRule) -> None:
        bisect.insort(self._rules, rule, key=_order)
        key = _exact_key(rule.match)
        if key is None:
            bisect.insort(self._wild, rule, key=_order)
        else:
            bisect.insort(self._exact.setdefault(key, []), rule, key=_order)

    def remove_where(self, pred: Callable[[FlowRule], bool]) -> int:
        keep = [r for r in self._rules if not pred(r)]
        removed = len(self._rules) - len(keep)
        if removed:
            self._rules, self._wild, self._exact = [], [], {}
            for r in keep:
                self.add(r)
        return removed

    def lookup(self, pkt: PacketHeader) -> FlowRule | None:
        best = next((r for r in self._wild if r.match.matches(pkt)), None)
        hits = self._exact.get((pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port,
                                pkt.protocol, pkt.in_port))
        if hits:
            for r in hits:
                if r.match.matches(pkt):
                    if best is None or _order(r) < _order(best):
                        best = r
                    break
        return best


def match_in_table(table: Iterable[FlowRule], pkt: PacketHeader) -> FlowRule | None:
    """Highest-priority matching rule; ties go to the smallest rule_id."""
    if isinstance(table, FlowTable):
        return table.lookup(pkt)
    hits = [r for r in table if r.match.matches(pkt)]
    return min(hits, key=_order) if hits else None


class VerdictKind(enum.Enum):
    FORWARD = "Forward"
    DROP = "Drop"
    SEND_TO_CONTROLLER = "SendToController"
    RATE_LIMITED = "RateLimited"


@dataclass(frozen=True)
class PipelineVerdict:
    kind: VerdictKind
    port: int | None = None
    table_index: int | None = None
    rule_id: int | None = None

    @property
    def blocked(self) -> bool:
        return self.kind in (VerdictKind.DROP, VerdictKind.RATE_LIMITED)

    def __str__(self):
        if self.kind is VerdictKind.FORWARD:
            return f"Forward({self.port})"
        return self.kind.value


class FlowTablePipeline:
    """A switch's ordered flow tables.  The last table belongs to PEPS."""

    def __init__(self, n_tables: int = 3):
        if n_tables < 2:
            raise MalformedPipeline("a pipeline needs at least two tables")
        self.tables = [FlowTable(i) for i in range(n_tables)]
        self.peps_enabled = True  # test hook: a failed outer layer
        self._next_rule_id = 0
        # rule_id -> (window index, admitted flow keys)
        self._limits: dict[int, tuple[int, set]] = {}

    @property
    def last_index(self) -> int:
        return len(self.tables) - 1

    @property
    def peps_table(self) -> FlowTable:
        return self.tables[-1]

    def rules(self) -> Iterator[FlowRule]:
        for t in self.tables:
            yield from t

    def __len__(self):
        return sum(len(t) for t in self.tables)

    def check_rule(self, rule: FlowRule) -> None:
        n = len(self.tables)
        if not 0 <= rule.table_index < n:
            raise MalformedPipeline(f"table {rule.table_index} does not exist")
        if not 0 <= rule.priority <= MAX_PRIORITY:
            raise PriorityBandViolation(f"priority {rule.priority} outside 0..{MAX_PRIORITY}")
        last = n - 1
        kind = rule.origin.kind
        if rule.origin.is_peps:
            if rule.table_index != last:
                raise TablePlacementViolation(
                    f"{rule.origin.text()} rule must go to table {last}, not {rule.table_index}")
            lo, hi = REMOTE_BAND if kind is OriginKind.REMOTE_RPT else LOCAL_PT_BAND
            if not lo <= rule.priority <= hi:
                raise PriorityBandViolation(
                    f"{rule.origin.text()} priority {rule.priority} outside [{lo}, {hi}]")
            if rule.action.kind not in (ActionKind.DROP, ActionKind.RATE_LIMIT, ActionKind.PASS):
                raise InvalidRule(f"{rule.action.text()} not allowed in the PEPS table")
        else:
            if rule.table_index == last:
                raise TablePlacementViolation("LocalCore rules cannot use the PEPS table")
            if rule.action.kind is ActionKind.PASS:
                raise InvalidRule("PASS is only meaningful in the PEPS table")
        if rule.action.kind is ActionKind.GOTO_TABLE:
            target = rule.action.table
            if target is None or not rule.table_index < target < n:
                raise MalformedPipeline(
                    f"goto {target} from table {rule.table_index} breaks acyclicity")

    def install(self, rule: FlowRule) -> FlowRule:
        self.check_rule(rule)
        rule = replace(rule, rule_id=self._next_rule_id)
        self._next_rule_id += 1
        self.tables[rule.table_index].add(rule)
        return rule

    def remove_where(self, pred: Callable[[FlowRule], bool]) -> int:
        removed = 0
        for t in self.tables:
            removed += t.remove_where(pred)
        return removed

    def check_invariants(self) -> None:
        """Full scan; raises on any broken pipeline invariant."""
        for rule in self.rules():
            self.check_rule(rule)

    def _admit(self, rule: FlowRule, pkt: PacketHeader, tick: int) -> bool:
        act = rule.action
        window = tick // act.window_ticks
        cur, flows = self._limits.get(rule.rule_id, (window, set()))
        if cur != window:
            flows = set()
        key = pkt.five_tuple
        if key not in flows:
            if len(flows) >= act.max_new_flows:
                self._limits[rule.rule_id] = (window, flows)
                return False
            flows.add(key)
        self._limits[rule.rule_id] = (window, flows)
        return True


def install_rule(pipeline: FlowTablePipeline, rule: FlowRule) -> FlowRule:
    """Insert ``rule`` and return it with its assigned rule_id."""
    return pipeline.install(rule)


def remove_rules_by_origin(pipeline: FlowTablePipeline, origin_filter) -> int:
    return pipeline.remove_where(lambda r: origin_filter(r.origin))


def process_pipeline(pipeline: FlowTablePipeline, pkt: PacketHeader,
                     tick: int = 0) -> PipelineVerdict:
    """Run ``pkt`` through the local tables, then (if still allowed) the PEPS table."""
    last = pipeline.last_index
    pending: int | None = None
    t = 0
    while t < last:
        rule = match_in_table(pipeline.tables[t], pkt)
        if rule is None:
            return PipelineVerdict(VerdictKind.SEND_TO_CONTROLLER, table_index=t)
        act = rule.action
        kind = act.kind
        if kind is ActionKind.DROP:
            return PipelineVerdict(VerdictKind.DROP, table_index=t, rule_id=rule.rule_id)
        if kind is ActionKind.SEND_TO_CONTROLLER:
            return PipelineVerdict(VerdictKind.SEND_TO_CONTROLLER, table_index=t,
                                   rule_id=rule.rule_id)
        if kind is ActionKind.FORWARD:
            pending = act.port
            break
        if kind is ActionKind.GOTO_TABLE:
            if act.table is None or act.table <= t:
                raise MalformedPipeline(f"goto {act.table} from table {t}")
            t = act.table
            continue
        if kind is ActionKind.RATE_LIMIT:
            if not pipeline._admit(rule, pkt, tick):
                return PipelineVerdict(VerdictKind.RATE_LIMITED, table_index=t,
                                       rule_id=rule.rule_id)
            if act.port is not None:
                pending = act.port
                break
            t += 1
            continue
        raise MalformedPipeline(f"{kind.value} in local table {t}")

    if pending is None:
        return PipelineVerdict(VerdictKind.SEND_TO_CONTROLLER, table_index=t)
    if pipeline.peps_enabled:
        rule = match_in_table(pipeline.peps_table, pkt)
        if rule is not None:
            kind = rule.action.kind
            if kind is ActionKind.DROP:
                return PipelineVerdict(VerdictKind.DROP, table_index=last, rule_id=rule.rule_id)
            if kind is ActionKind.RATE_LIMIT and not pipeline._admit(rule, pkt, tick):
                return PipelineVerdict(VerdictKind.RATE_LIMITED, table_index=last,
                                       rule_id=rule.rule_id)
    return PipelineVerdict(VerdictKind.FORWARD, port=pending)
