"""Line-oriented scenario files.

Sections and line forms (``#`` starts a comment; see ``docs/scenario-format.md``)::

    [topology]
    seed 7
    switch s1 A                      # switch <id> <domain>
    host h1 10.0.0.1 s1:1            # host <name> <ip> <switch>:<port>
    link s1:2 s2:1                   # inter-domain when the switches' domains differ

    [zones]
    zone Z1 secure "Location 1" s1:1 s1:3

    [policies A]                     # local policies of domain A (default: PRIO 0 ALLOW)
    PRIO 10 DENY src=10.0.0.9        # omitted match fields are wildcards

    [subscribers]
    subscriber db dp 5432 tickets=Z1  # subscriber <id> <host> <ports|*> [tickets=zones]

    [inner db]                       # application-level policies of the data provider
    PRIO 5 ALLOW src=10.0.0.1

    [channels]
    connect A B latency=1

    [inject]
    at 3 from h1 to dp dport=5432 count=10 every=1 label=legit

    [hooks]
    lbac B A db zones=Z1 at=0
    rpt C A db at=0 : PRIO 5 DENY src=10.0.0.9 dst=10.2.0.5 ; PRIO 4 ...
"""

from __future__ import annotations

import ipaddress
import shlex
from dataclasses import dataclass, field

from ..dataplane import Protocol
from ..errors import ParseError, PolicyParseError
from ..location import SecurityClass
from ..policy import Policy, parse_policy

SECTIONS = ("topology", "zones", "policies", "subscribers", "inner", "channels", "inject", "hooks")
HOOK_KINDS = ("disable_outer", "lbac", "teardown", "pin", "rpt", "pt", "move", "ltr", "local",
              "until")


@dataclass(frozen=True)
class HostDecl:
    name: str
    ip: ipaddress.IPv4Address
    switch: str
    port: int
    line: int


@dataclass(frozen=True)
class LinkDecl:
    a: str
    pa: int
    b: str
    pb: int
    line: int


@dataclass(frozen=True)
class ZoneDecl:
    zone_id: str
    security: SecurityClass
    label: str
    ports: tuple[tuple[str, int], ...]
    line: int


@dataclass(frozen=True)
class SubscriberDecl:
    subscriber_id: str
    host: str
    ports: frozenset[int] | None
    ticket_zones: frozenset[str] | None
    line: int


@dataclass(frozen=True)
class ChannelDecl:
    a: str
    b: str
    latency: int
    line: int


@dataclass(frozen=True)
class InjectDecl:
    tick: int
    src_host: str
    dst: str
    dport: int = 80
    sport: int | None = None
    protocol: Protocol = Protocol.TCP
    count: int = 1
    every: int = 1
    src_ip: ipaddress.IPv4Address | None = None
    label: str = ""
    ticket_of: str | None = None
    line: int = 0


@dataclass(frozen=True)
class HookDecl:
    kind: str
    tick: int
    args: tuple[str, ...]
    options: dict
    policies: tuple[Policy, ...] = ()
    line: int = 0


@dataclass
class ScenarioSpec:
    seed: int = 0
    seed_given: bool = False
    switches: dict[str, str] = field(default_factory=dict)
    hosts: list[HostDecl] = field(default_factory=list)
    links: list[LinkDecl] = field(default_factory=list)
    zones: list[ZoneDecl] = field(default_factory=list)
    policies: dict[str, list[Policy]] = field(default_factory=dict)
    subscribers: list[SubscriberDecl] = field(default_factory=list)
    inner: dict[str, list[Policy]] = field(default_factory=dict)
    channels: list[ChannelDecl] = field(default_factory=list)
    injections: list[InjectDecl] = field(default_factory=list)
    hooks: list[HookDecl] = field(default_factory=list)
    until: int | None = None


def _endpoint(text: str, lineno: int) -> tuple[str, int]:
    sw, sep, port = text.rpartition(":")
    if not sep or not sw:
        raise ParseError(f"expected <switch>:<port>, got {text!r}", lineno)
    return sw, _int(port, lineno)


def _int(text: str, lineno: int, minimum: int = 0) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"expected an integer, got {text!r}", lineno) from None
    if value < minimum:
        raise ParseError(f"{value} is below {minimum}", lineno)
    return value


def _ip(text: str, lineno: int) -> ipaddress.IPv4Address:
    try:
        return ipaddress.IPv4Address(text)
    except ValueError:
        raise ParseError(f"bad IPv4 address {text!r}", lineno) from None


def _ports(text: str, lineno: int) -> frozenset[int] | None:
    if text == "*":
        return None
    return frozenset(_int(p, lineno) for p in text.split(","))


def _options(tokens: list[str], lineno: int) -> tuple[list[str], dict[str, str]]:
    args, opts = [], {}
    for tok in tokens:
        if "=" in tok:
            k, v = tok.split("=", 1)
            if k in opts:
                raise ParseError(f"option {k} given twice", lineno)
            opts[k] = v
        else:
            args.append(tok)
    return args, opts


def _policy(text: str, lineno: int) -> Policy:
    try:
        return parse_policy(text, lineno)
    except PolicyParseError as exc:
        raise ParseError(str(exc).split(": ", 1)[-1], lineno) from None


def _topology_line(spec: ScenarioSpec, toks: list[str], n: int) -> None:
    kind = toks[0]
    if kind == "seed" and len(toks) == 2:
        spec.seed = _int(toks[1], n)
        spec.seed_given = True
    elif kind == "switch" and len(toks) == 3:
        if toks[1] in spec.switches:
            raise ParseError(f"switch {toks[1]} declared twice", n)
        spec.switches[toks[1]] = toks[2]
    elif kind == "host" and len(toks) == 4:
        sw, port = _endpoint(toks[3], n)
        spec.hosts.append(HostDecl(toks[1], _ip(toks[2], n), sw, port, n))
    elif kind == "link" and len(toks) == 3:
        a, pa = _endpoint(toks[1], n)
        b, pb = _endpoint(toks[2], n)
        spec.links.append(LinkDecl(a, pa, b, pb, n))
    else:
        raise ParseError(f"unrecognised topology line {' '.join(toks)!r}", n)


def _zone_line(spec: ScenarioSpec, toks: list[str], n: int) -> None:
    if toks[0] != "zone" or len(toks) < 5:
        raise ParseError("expected: zone <id> <secure|nonsecure> \"<label>\" <sw>:<port>...", n)
    try:
        sec = SecurityClass(toks[2].lower())
    except ValueError:
        raise ParseError(f"security class must be secure or nonsecure, not {toks[2]!r}", n) \
            from None
    ports = tuple(_endpoint(t, n) for t in toks[4:])
    spec.zones.append(ZoneDecl(toks[1], sec, toks[3], ports, n))


def _subscriber_line(spec: ScenarioSpec, toks: list[str], n: int) -> None:
    args, opts = _options(toks, n)
    if len(args) != 4 or args[0] != "subscriber" or set(opts) - {"tickets"}:
        raise ParseError("expected: subscriber <id> <host> <ports|*> [tickets=Z1,Z2]", n)
    zones = frozenset(opts["tickets"].split(",")) if "tickets" in opts else None
    spec.subscribers.append(SubscriberDecl(args[1], args[2], _ports(args[3], n), zones, n))


def _channel_line(spec: ScenarioSpec, toks: list[str], n: int) -> None:
    args, opts = _options(toks, n)
    if len(args) != 3 or args[0] != "connect" or set(opts) - {"latency"}:
        raise ParseError("expected: connect <domain> <domain> [latency=N]", n)
    spec.channels.append(ChannelDecl(args[1], args[2], _int(opts.get("latency", "1"), n, 1), n))


_INJECT_OPTS = {"dport", "sport", "proto", "count", "every", "src_ip", "label", "ticket"}


def _inject_line(spec: ScenarioSpec, toks: list[str], n: int) -> None:
    args, opts = _options(toks, n)
    if (len(args) != 6 or args[0] != "at" or args[2] != "from" or args[4] != "to"
            or set(opts) - _INJECT_OPTS):
        raise ParseError("expected: at <tick> from <host> to <host|ip> [key=value...]", n)
    try:
        proto = Protocol.parse(opts.get("proto", "tcp"))
    except (KeyError, ValueError):
        raise ParseError(f"unknown protocol {opts['proto']!r}", n) from None
    spec.injections.append(InjectDecl(
        tick=_int(args[1], n), src_host=args[3], dst=args[5],
        dport=_int(opts.get("dport", "80"), n),
        sport=_int(opts["sport"], n) if "sport" in opts else None,
        protocol=proto,
        count=_int(opts.get("count", "1"), n, 1),
        every=_int(opts.get("every", "1"), n, 0),
        src_ip=_ip(opts["src_ip"], n) if "src_ip" in opts else None,
        label=opts.get("label", ""),
        ticket_of=opts.get("ticket"),
        line=n,
    ))


def _hook_line(spec: ScenarioSpec, text: str, n: int) -> None:
    # policies follow a spaced colon, so endpoints like s1:2 are left alone
    head, colon, tail = text.partition(" : ")
    args, opts = _options(shlex.split(head), n)
    kind = args[0]
    if kind not in HOOK_KINDS:
        raise ParseError(f"unknown hook {kind!r}", n)
    if kind == "until":
        if len(args) != 2:
            raise ParseError("expected: until <tick>", n)
        spec.until = _int(args[1], n)
        return
    arity = {"disable_outer": 0, "lbac": 3, "teardown": 3, "pin": 1, "rpt": 3, "pt": 1,
             "move": 2, "ltr": 1, "local": 1}[kind]
    if len(args) - 1 != arity:
        raise ParseError(f"{kind} takes {arity} positional arguments", n)
    if kind in ("rpt", "pt", "local") and not colon:
        raise ParseError(f"{kind} needs ': <policy> ; <policy> ...'", n)
    if kind == "lbac" and "zones" not in opts:
        raise ParseError("lbac needs zones=Z1,...", n)
    if kind == "move":
        _endpoint(args[2], n)
    policies = tuple(_policy(p.strip(), n) for p in tail.split(";") if p.strip())
    tick = _int(opts.pop("at", "0"), n)
    spec.hooks.append(HookDecl(kind, tick, tuple(args[1:]), opts, policies, n))


def parse_scenario(text: str) -> ScenarioSpec:
    spec = ScenarioSpec()
    section = None
    target = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment_quoted(raw)
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"unterminated section header {line!r}", n)
            words = line[1:-1].split()
            if not words or words[0] not in SECTIONS:
                raise ParseError(f"unknown section {line!r}", n)
            section = words[0]
            needs_arg = section in ("policies", "inner")
            if needs_arg != (len(words) == 2) or len(words) > 2:
                raise ParseError(f"bad section header {line!r}", n)
            target = words[1] if needs_arg else None
            if section == "policies":
                spec.policies.setdefault(target, [])
            if section == "inner":
                spec.inner.setdefault(target, [])
            continue
        if section is None:
            raise ParseError("content before the first section header", n)
        try:
            toks = shlex.split(line)
        except ValueError as exc:
            raise ParseError(str(exc), n) from None
        if section == "topology":
            _topology_line(spec, toks, n)
        elif section == "zones":
            _zone_line(spec, toks, n)
        elif section == "policies":
            spec.policies[target].append(_policy(line, n))
        elif section == "inner":
            spec.inner[target].append(_policy(line, n))
        elif section == "subscribers":
            _subscriber_line(spec, toks, n)
        elif section == "channels":
            _channel_line(spec, toks, n)
        elif section == "inject":
            _inject_line(spec, toks, n)
        else:
            _hook_line(spec, line, n)
    return spec


def merge_config(base: ScenarioSpec, cfg: ScenarioSpec) -> ScenarioSpec:
    """Overlay ``cfg`` on ``base``.

    Scalar settings (seed, until) and per-domain or per-subscriber policy
    sections in ``cfg`` replace those of ``base``; every other declaration is
    added after the base ones.
    """
    out = ScenarioSpec(
        seed=cfg.seed if cfg.seed_given else base.seed,
        seed_given=base.seed_given or cfg.seed_given,
        switches=dict(base.switches),
        hosts=base.hosts + cfg.hosts,
        links=base.links + cfg.links,
        zones=base.zones + cfg.zones,
        policies={**base.policies, **cfg.policies},
        subscribers=base.subscribers + cfg.subscribers,
        inner={**base.inner, **cfg.inner},
        channels=base.channels + cfg.channels,
        injections=base.injections + cfg.injections,
        hooks=base.hooks + cfg.hooks,
        until=cfg.until if cfg.until is not None else base.until,
    )
    for sw, dom in cfg.switches.items():
        if sw in out.switches:
            raise ParseError(f"switch {sw} declared in both scenario and config")
        out.switches[sw] = dom
    return out


def _strip_comment_quoted(raw: str) -> str:
    """Drop a trailing comment, leaving ``#`` inside quotes alone."""
    out, quote = [], None
    for ch in raw:
        if quote:
            quote = None if ch == quote else quote
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out).strip()
