import ipaddress
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from helpers import P, two_domain_fabric
from peps.controller import Controller
from peps.dataplane import PacketHeader, VerdictKind, process_pipeline
from peps.errors import (
    BadSignature,
    IpMismatch,
    NotAttached,
    PolicyParseError,
    StaleRequest,
    UnknownHost,
    UnmappedPort,
)
from peps.location import (
    GeoLocationTable,
    LocationTicket,
    LocationTicketRequest,
    LocationZone,
    PacketInEvent,
    SecurityClass,
    TicketReject,
    issue_ticket,
    make_ltr,
    pin_port,
    track_host,
    verify_ticket,
)
from peps.signing import KeyPair

H = "10.0.0.1"
Z1 = LocationZone("Z1", "Location 1", SecurityClass.SECURE)
Z2 = LocationZone("Z2", "Location 2")
USER = KeyPair.generate("user:h1")


def ctrl():
    c = Controller("A", two_domain_fabric(), local_policies=[P("0 ALLOW")])
    c.set_zone("s1", 1, Z1)
    c.set_zone("s1", 2, Z2)
    c.set_zone("s2", 1, Z2)
    return c


def test_track_host_first_then_move():
    geo = GeoLocationTable({("sw1", 1): Z1, ("sw2", 3): Z2})
    s = track_host(geo, PacketInEvent("sw1", 1, ipaddress.IPv4Address(H), 0))
    assert (s.zone, s.moved) == (Z1, False)
    s = track_host(geo, PacketInEvent("sw2", 3, ipaddress.IPv4Address(H), 4))
    assert (s.zone, s.moved) == (Z2, True)
    assert geo.attachment[ipaddress.IPv4Address(H)].last_seen == 4
    with pytest.raises(UnmappedPort):
        track_host(geo, PacketInEvent("sw9", 1, ipaddress.IPv4Address(H)))


def test_same_zone_different_port_is_not_movement():
    geo = GeoLocationTable({("a", 1): Z1, ("a", 2): Z1})
    track_host(geo, PacketInEvent("a", 1, ipaddress.IPv4Address(H)))
    assert not track_host(geo, PacketInEvent("a", 2, ipaddress.IPv4Address(H))).moved


def pkt(src=H, dst="10.0.0.5", dport=5432, sport=40000):
    return PacketHeader(src, dst, sport, dport)


def test_pin_port_blocks_spoofing_on_same_switch():
    c = ctrl()
    c.handle_packet_in("s1", 1, pkt())
    pin_port(c, H, "s1", 1)
    pipe = c.switch("s1").pipeline
    for sport in range(100):
        spoof = pkt(sport=30000 + sport).at_port(2)
        assert process_pipeline(pipe, spoof).kind is VerdictKind.DROP
    assert c.geo.attachment[ipaddress.IPv4Address(H)].port_id == 1
    # legitimate traffic from the pinned port is unaffected
    assert process_pipeline(pipe, pkt().at_port(1)).kind is VerdictKind.FORWARD
    assert c.handle_packet_in("s1", 1, pkt(sport=1)).verdict.kind is VerdictKind.FORWARD


def test_spoof_from_other_switch_refused_by_controller():
    c = ctrl()
    c.handle_packet_in("s1", 1, pkt())
    pin_port(c, H, "s1", 1)
    res = c.handle_packet_in("s2", 1, pkt(dst="10.0.0.2"))
    assert res.spoofed and res.verdict.kind is VerdictKind.DROP
    assert c.geo.attachment[ipaddress.IPv4Address(H)].switch_id == "s1"


def test_pin_unattached_host():
    with pytest.raises(NotAttached):
        pin_port(ctrl(), H, "s1", 1)


def located():
    c = ctrl()
    c.handle_packet_in("s1", 1, pkt())
    return c


def test_issue_verify_round_trip():
    c = located()
    c.tick(5)
    lt = issue_ticket(c, make_ltr(H, USER, 5), H)
    assert lt.zone_id == "Z1" and lt.issuer_domain_id == "A"
    assert LocationTicket.parse(lt.line()) == lt
    check = verify_ticket(lt, c.public_key, now=20, expected_ip=H,
                          expected_key=USER.public_key)
    assert check.accepted and check.line() == "ACCEPT"


def test_issue_errors():
    c = located()
    with pytest.raises(IpMismatch):
        issue_ticket(c, make_ltr(H, USER, 0), "10.0.0.2")
    forged = replace(make_ltr(H, USER, 0), requestor_public_key=KeyPair.generate("b").public_key)
    with pytest.raises(BadSignature):
        issue_ticket(c, forged, H)
    with pytest.raises(StaleRequest):
        issue_ticket(c, make_ltr(H, USER, 0), H, now=11)
    assert issue_ticket(c, make_ltr(H, USER, 0), H, now=10)
    with pytest.raises(UnknownHost):
        issue_ticket(c, make_ltr("10.0.0.2", USER, 0), "10.0.0.2")


def test_ltr_text_round_trip():
    ltr = make_ltr(H, USER, 3)
    assert LocationTicketRequest.parse(ltr.line()) == ltr
    assert ltr.line().startswith(f"LTR ip={H} key={USER.public_key.hex()} t=3 sig=")
    with pytest.raises(PolicyParseError):
        LocationTicketRequest.parse("LTR ip=1.2.3.4")


def test_expired_and_sybil():
    c = located()
    lt = issue_ticket(c, make_ltr(H, USER, 0), H)
    assert verify_ticket(lt, c.public_key, now=51).reason is TicketReject.EXPIRED
    assert verify_ticket(lt, c.public_key, now=50).accepted
    # the same key presented from a second IP
    sybil = verify_ticket(lt, c.public_key, now=1, expected_ip="10.0.0.2",
                          expected_key=USER.public_key)
    assert sybil.reason is TicketReject.IP_MISMATCH
    other = KeyPair.generate("other").public_key
    assert verify_ticket(lt, c.public_key, 1, expected_ip=H,
                         expected_key=other).reason is TicketReject.KEY_MISMATCH


MUTATIONS = {
    "ip": lambda lt, r: replace(lt, requestor_ip=ipaddress.IPv4Address(int(lt.requestor_ip) ^ r)),
    "key": lambda lt, r: replace(lt, requestor_public_key=bytes(
        [lt.requestor_public_key[0] ^ (r & 0xFF or 1)]) + lt.requestor_public_key[1:]),
    "time": lambda lt, r: replace(lt, timestamp=lt.timestamp + r),
    "zone": lambda lt, r: replace(lt, zone_id=lt.zone_id + "x" * (r % 3 + 1)),
    "sig": lambda lt, r: replace(lt, signature=bytes(
        [lt.signature[r % 64] ^ 1]).join([lt.signature[:r % 64], lt.signature[r % 64 + 1:]])),
}


@settings(max_examples=150, deadline=None)
@given(st.sampled_from(sorted(MUTATIONS)), st.integers(1, 2**16))
def test_every_field_mutation_rejected(field, r):
    c = located()
    lt = issue_ticket(c, make_ltr(H, USER, 0), H)
    mutant = MUTATIONS[field](lt, r)
    assert mutant != lt
    check = verify_ticket(mutant, c.public_key, now=1, expected_ip=H,
                          expected_key=USER.public_key)
    assert check.reason is TicketReject.BAD_SIGNATURE
