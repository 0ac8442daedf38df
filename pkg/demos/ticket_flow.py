"""Location tickets end to end, without the simulator.

A controller places alice in a secure zone, signs her a ticket, and a
verifier checks it.  Then mallory tries to use it.
"""

from peps.controller import Controller
from peps.dataplane import PacketHeader
from peps.location import (LocationZone, SecurityClass, issue_ticket, make_ltr,
                           verify_ticket)
from peps.routing import Fabric
from peps.signing import KeyPair

fabric = Fabric()
fabric.add_switch("s1", "A")
fabric.add_host("10.0.0.1", "s1", 1)
fabric.add_host("10.0.0.2", "s1", 2)
ctrl = Controller("A", fabric)
ctrl.set_zone("s1", 1, LocationZone("Z1", "lab", SecurityClass.SECURE))

# the controller learns alice's port from her first packet
ctrl.handle_packet_in("s1", 1, PacketHeader("10.0.0.1", "10.0.0.9", 1000, 80))

alice = KeyPair.generate("demo:alice")
lt = issue_ticket(ctrl, make_ltr("10.0.0.1", alice, now=0), "10.0.0.1")
print(lt.line())

for who, ip in (("alice", "10.0.0.1"), ("mallory", "10.0.0.2")):
    check = verify_ticket(lt, ctrl.public_key, now=5, expected_ip=ip,
                          expected_key=alice.public_key)
    print(f"{who:8s} presents it: {check.reason.value if check.reason else 'accepted'}")
print(f"after 60 ticks: {verify_ticket(lt, ctrl.public_key, now=60).reason.value}")
