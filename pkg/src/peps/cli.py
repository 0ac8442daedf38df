"""Command-line entry point.

Exit codes
    0  success; for ``validate`` and ``ticket`` the input was accepted
    1  ``validate`` rejected the transfer, or a ticket was refused
    2  unreadable input or a parse error (the line number goes to stderr)
    3  the scenario broke a network invariant while being built or run

Machine-readable results go to stdout (or ``--out``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import ipaddress
import sys
from pathlib import Path

from . import signing
from .controller import EPHEMERAL_PORT, OUTSIDE_IP, Controller, TransferReport
from .dataplane import Origin, Protocol
from .errors import (
    ParseError,
    PepsError,
    PolicyParseError,
    Rejection,
)
from .location import (
    LT_MAX_AGE,
    LTR_FRESHNESS,
    Attachment,
    LocationTicket,
    LocationTicketRequest,
    LocationZone,
    SecurityClass,
    issue_ticket,
    make_ltr,
    verify_ticket,
)
from .policy import (
    HeaderUniverse,
    RemotePolicyTransfer,
    ServiceAddress,
    compile_transfer,
    parse_policies,
    parse_transfer,
    validate_pt,
    validate_rpt,
)
from .simnet import build_topology
from .simnet.bench import WINDOW, run_bench, samples_csv
from .simnet.scenario import HookDecl, merge_config, parse_scenario
from .simnet.scenarios import progressive_firewall_text

EXIT_OK, EXIT_REJECT, EXIT_PARSE, EXIT_INVARIANT = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        return Path(path).read_text("utf-8")
    except OSError as exc:
        raise _Fail(EXIT_PARSE, f"{path}: {exc.strerror or exc}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


def _parse(path: str, parser, text: str | None = None):
    try:
        return parser(_read(path) if text is None else text)
    except (ParseError, PolicyParseError) as exc:
        raise _Fail(EXIT_PARSE, f"{path}: {exc}") from None


# ----------------------------------------------------------------------- run

def cmd_run(args) -> int:
    spec = _parse(args.scenario, parse_scenario)
    if args.config:
        cfg = _parse(args.config, parse_scenario)
        try:
            spec = merge_config(spec, cfg)
        except ParseError as exc:
            raise _Fail(EXIT_PARSE, f"{args.config}: {exc}") from None
    if args.seed is not None:
        spec.seed = args.seed
    if args.disable_outer:
        spec.hooks.insert(0, HookDecl("disable_outer", 0, (), {}))
    try:
        report = build_topology(spec, budget=args.budget).run(args.until)
    except PepsError as exc:
        raise _Fail(EXIT_INVARIANT, f"{args.scenario}: {exc}") from None
    _emit(report.to_csv(), args.out)
    if args.log:
        Path(args.log).write_text("\n".join(report.log) + "\n", "utf-8")
    t = report.totals
    print(f"injected={report.injected} delivered={t['delivered']} "
          f"in_flight={report.in_flight} granted={len(report.granted)} "
          f"refused={len(report.refused)}", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------ validate

def _default_universe(policies, scope: ServiceAddress) -> HeaderUniverse:
    base = HeaderUniverse((OUTSIDE_IP,), (OUTSIDE_IP,), (EPHEMERAL_PORT,), (0,),
                          (Protocol.TCP, Protocol.UDP, Protocol.ICMP))
    return base.extended_with(policies, [scope])


def _scope_for(transfer, scope_text: str | None) -> ServiceAddress:
    if isinstance(transfer, RemotePolicyTransfer):
        return transfer.subscriber_service_address
    if not scope_text:
        raise _Fail(EXIT_PARSE, "a PT needs --scope <ip:ports> (its subscriber's address)")
    try:
        return ServiceAddress.parse(scope_text)
    except (PolicyParseError, ValueError) as exc:
        raise _Fail(EXIT_PARSE, f"--scope: {exc}") from None


def cmd_validate(args) -> int:
    local = _parse(args.local, parse_policies)
    transfer = _parse(args.transfer, parse_transfer)
    scope = _scope_for(transfer, args.scope)
    if args.universe:
        universe = _parse(args.universe, HeaderUniverse.parse)
    else:
        universe = _default_universe(list(local) + list(transfer.policies), scope)
    try:
        if isinstance(transfer, RemotePolicyTransfer):
            validate_rpt(local, transfer, universe)
        else:
            validate_pt(local, transfer, universe, scope)
    except Rejection as exc:
        print(TransferReport.rejected(exc).to_line())
        print(str(exc), file=sys.stderr)
        return EXIT_REJECT
    except PepsError as exc:
        raise _Fail(EXIT_PARSE, str(exc)) from None
    print("ACCEPT")
    return EXIT_OK


def cmd_compile(args) -> int:
    transfer = _parse(args.transfer, parse_transfer)
    scope = _scope_for(transfer, args.scope)
    if isinstance(transfer, RemotePolicyTransfer):
        origin = Origin.rpt(transfer.origin_domain_id, transfer.subscriber_id)
    else:
        origin = Origin.pt(transfer.subscriber_id)
    try:
        rules = compile_transfer(transfer.policies, origin, scope, args.tables - 1)
    except PepsError as exc:
        raise _Fail(EXIT_PARSE, str(exc)) from None
    _emit("".join(r.text() + "\n" for r in rules), args.out)
    return EXIT_OK


# ------------------------------------------------------------------- tickets

def cmd_ticket_request(args) -> int:
    key = signing.KeyPair.generate(args.key_seed)
    print(make_ltr(args.ip, key, args.now).line())
    return EXIT_OK


def _issuer_key(args) -> bytes:
    if args.issuer_key:
        try:
            return bytes.fromhex(args.issuer_key)
        except ValueError:
            raise _Fail(EXIT_PARSE, "--issuer-key must be hex") from None
    return signing.KeyPair.generate(f"{args.seed}:controller:{args.domain}").public_key


def cmd_ticket_issue(args) -> int:
    ltr = _parse(args.ltr, lambda t: LocationTicketRequest.parse(t.strip()))
    ctrl = Controller(args.domain,
                      keypair=signing.KeyPair.generate(f"{args.seed}:controller:{args.domain}"))
    ctrl.tick(args.now)
    # the caller states where the requesting host was seen
    zone = LocationZone(args.zone, args.zone, SecurityClass(args.security))
    ctrl.geo.zone_map[("cli", 0)] = zone
    ctrl.geo.attachment[ltr.requestor_ip] = Attachment("cli", 0, args.now)
    observed = args.observed_ip or str(ltr.requestor_ip)
    try:
        lt = issue_ticket(ctrl, ltr, observed, freshness=args.freshness)
    except Rejection as exc:
        print(f"REJECT {exc.reason}")
        print(str(exc), file=sys.stderr)
        return EXIT_REJECT
    print(lt.line())
    return EXIT_OK


def cmd_ticket_verify(args) -> int:
    lt = _parse(args.lt, lambda t: LocationTicket.parse(t.strip()))
    expected_key = None
    if args.expected_key:
        try:
            expected_key = bytes.fromhex(args.expected_key)
        except ValueError:
            raise _Fail(EXIT_PARSE, "--expected-key must be hex") from None
    check = verify_ticket(lt, _issuer_key(args), args.now, args.max_age,
                          expected_ip=args.expected_ip, expected_key=expected_key)
    print(check.line())
    return EXIT_OK if check.accepted else EXIT_REJECT


# --------------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    base, loaded = run_bench(args.switches, args.ltr, args.flows, args.window, args.seed)
    _emit(samples_csv(base, loaded), args.out)
    print(f"flows handled: baseline={base.total_flows} with {args.ltr} LTR="
          f"{loaded.total_flows} (LTRs served {loaded.ltr_served})", file=sys.stderr)
    return EXIT_OK


def cmd_firewall_chain(args) -> int:
    text = progressive_firewall_text(args.domains, count=args.count, seed=args.seed)
    if args.emit_scenario:
        _emit(text, args.out)
        return EXIT_OK
    try:
        report = build_topology(text).run()
    except PepsError as exc:
        raise _Fail(EXIT_INVARIANT, str(exc)) from None
    _emit(report.to_csv(), args.out)
    for dom, drops in report.drops_by_domain.items():
        print(f"{dom}: " + " ".join(f"{k}={v}" for k, v in drops.items()), file=sys.stderr)
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _ip(text: str) -> str:
    try:
        return str(ipaddress.IPv4Address(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad IPv4 address {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peps", description=__doc__.splitlines()[0],
                                epilog="exit codes: 0 ok, 1 rejected, 2 parse error, "
                                       "3 invariant violation")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario file and write the metrics CSV")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="CSV path (default: stdout)")
    r.add_argument("--disable-outer", action="store_true",
                   help="turn off every PEPS table (the failed-outer-layer check)")
    r.add_argument("--config", help="extra scenario sections overriding the file")
    r.add_argument("--until", type=int, help="stop after this tick")
    r.add_argument("--budget", type=int, default=100, help="controller messages per tick")
    r.add_argument("--log", help="write the event log here")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a PT or RPT against local policies")
    v.add_argument("--local", required=True)
    v.add_argument("--transfer", required=True)
    v.add_argument("--universe")
    v.add_argument("--scope", help="subscriber address for a PT, e.g. 10.0.0.5:80,443")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("compile", help="print the PEPS-table rules for a transfer")
    c.add_argument("--transfer", required=True)
    c.add_argument("--scope")
    c.add_argument("--tables", type=int, default=3)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compile)

    t = sub.add_parser("ticket", help="location ticket requests and tickets")
    tsub = t.add_subparsers(dest="ticket_command", required=True)
    tr = tsub.add_parser("request", help="print a signed LTR")
    tr.add_argument("--ip", required=True, type=_ip)
    tr.add_argument("--key-seed", required=True, help="seed string of the host key")
    tr.add_argument("--now", type=int, default=0)
    tr.set_defaults(func=cmd_ticket_request)
    ti = tsub.add_parser("issue", help="answer an LTR file with an LT")
    ti.add_argument("--ltr", required=True)
    ti.add_argument("--zone", required=True, help="zone the host was located in")
    ti.add_argument("--security", choices=[s.value for s in SecurityClass],
                    default=SecurityClass.SECURE.value)
    ti.add_argument("--domain", default="A")
    ti.add_argument("--seed", type=int, default=0, help="scenario seed of the controller key")
    ti.add_argument("--now", type=int, default=0)
    ti.add_argument("--observed-ip", type=_ip, help="source address the LTR arrived from")
    ti.add_argument("--freshness", type=int, default=LTR_FRESHNESS)
    ti.set_defaults(func=cmd_ticket_issue)
    tv = tsub.add_parser("verify", help="check an LT file")
    tv.add_argument("--lt", required=True)
    tv.add_argument("--domain", default="A")
    tv.add_argument("--seed", type=int, default=0)
    tv.add_argument("--issuer-key", help="issuer public key in hex (overrides --seed)")
    tv.add_argument("--now", type=int, default=0)
    tv.add_argument("--max-age", type=int, default=LT_MAX_AGE)
    tv.add_argument("--expected-ip", type=_ip)
    tv.add_argument("--expected-key")
    tv.set_defaults(func=cmd_ticket_verify)

    b = sub.add_parser("bench", help="packet_in throughput with and without LTR load")
    b.add_argument("--switches", type=int, default=32)
    b.add_argument("--ltr", type=int, default=1000)
    b.add_argument("--flows", type=int, default=150, help="new flows offered per tick")
    b.add_argument("--window", type=int, default=WINDOW)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("firewall-chain", help="run the progressive firewall chain")
    f.add_argument("--domains", type=int, default=3)
    f.add_argument("--count", type=int, default=10)
    f.add_argument("--seed", type=int, default=6)
    f.add_argument("--emit-scenario", action="store_true",
                   help="print the generated scenario instead of running it")
    f.add_argument("--out")
    f.set_defaults(func=cmd_firewall_chain)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"peps: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"peps: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
