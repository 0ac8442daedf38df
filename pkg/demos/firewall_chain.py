"""Layered firewall along a chain of domains.

The last domain hosts a web server and asks every upstream domain to drop
the bots behind it.  Prints where each class of traffic ended up.

    python demos/firewall_chain.py [domains]
"""

import sys

from peps.simnet.scenarios import default_ladder, scenario_progressive_firewall

k = int(sys.argv[1]) if len(sys.argv) > 1 else 4
report = scenario_progressive_firewall(k)
print(f"chain of {k} domains, ladder {default_ladder(k)}")
for dom in (f"D{i}" for i in range(1, k + 1)):
    print(f"  {dom}: {report.drops_by_domain.get(dom, {})}")
print(f"delivered: {report['delivered']} of {report.injected}")
for i in range(1, k):
    a, b = f"d{i}", f"d{i + 1}"
    print(f"  {a}-{b}: {report.link_bytes(a, b)} packets")
