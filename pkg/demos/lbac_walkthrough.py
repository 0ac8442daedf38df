"""Location-based access control across two domains.

Runs the shipped two-domain scenario twice, once as written and once with
every switch's PEPS table turned off, and shows that only the place where
mallory is stopped changes.

    python demos/lbac_walkthrough.py
"""

from collections import Counter

from peps.simnet import build_topology, run
from peps.simnet.scenarios import canned_text


def summary(title, report):
    granted = Counter(label for _, label in report.granted)
    refused = Counter(label for _, label in report.refused)
    print(f"== {title}")
    print(f"   dropped at B's edge : {report['dropped_at_source_edge']}")
    print(f"   refused by the app  : {dict(refused)}")
    print(f"   granted by the app  : {dict(granted)}")
    print(f"   packets over a1-b2  : {report.link_bytes('a1', 'b2')}")


text = canned_text("lbac_realtime")
on = run(build_topology(text))
off = run(build_topology(text + "\n[hooks]\ndisable_outer at=0\n"))
summary("outer layers on", on)
summary("outer layers off", off)
same = sorted(on.granted) == sorted(off.granted)
print(f"grant sets identical: {same}")

print("\nEast-west traffic:")
for line in on.log:
    if " EW " in line or " LTR " in line:
        print("  ", line)
