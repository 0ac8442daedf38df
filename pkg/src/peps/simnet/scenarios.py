"""Canned scenarios that ship with the package."""

from __future__ import annotations

from importlib import resources

from .engine import build_topology
from .metrics import MetricsReport

CANNED = ("lbac_realtime", "lbac_mobility", "tickets", "dos", "firewall_ladder")

BLOCKED_LABEL = "blocked"
WEB_PORT = 80


def canned_text(name: str) -> str:
    if name not in CANNED:
        raise KeyError(f"no canned scenario {name!r}; choose from {', '.join(CANNED)}")
    return resources.files("peps.scenarios").joinpath(f"{name}.scn").read_text("utf-8")


def web_ip(k: int) -> str:
    return f"10.{k}.0.10"


def bot_ip(i: int) -> str:
    return f"10.{i}.0.66"


def default_ladder(k: int) -> dict[str, list[str]]:
    """Domain i blocks the bots of every domain up to and including i.

    Restrictions therefore tighten as traffic nears the protected domain
    ``D<k>``, whose own local policy is the last (innermost) ring.
    """
    web = web_ip(k)
    return {f"D{i}": [f"PRIO 5 DENY src={bot_ip(j)} dst={web} dport={WEB_PORT}"
                      for j in range(1, i + 1)]
            for i in range(1, k)}


def progressive_firewall_text(k: int = 3, ladder: dict[str, list[str]] | None = None,
                              count: int = 10, seed: int = 6, start: int = 10) -> str:
    """Scenario text for a chain D1 - D2 - ... - Dk protecting a web server in Dk.

    Every domain but the last holds one legitimate user and one bot.  ``ladder``
    maps a domain to the RPT policies Dk sends it.
    """
    if k < 2:
        raise ValueError("a firewall chain needs at least two domains")
    ladder = default_ladder(k) if ladder is None else ladder
    web = web_ip(k)
    lines = ["[topology]", f"seed {seed}"]
    lines += [f"switch d{i} D{i}" for i in range(1, k + 1)]
    for i in range(1, k):
        lines += [f"host user{i} 10.{i}.0.1 d{i}:1", f"host bot{i} {bot_ip(i)} d{i}:2"]
    lines.append(f"host web {web} d{k}:1")
    lines += [f"link d{i}:3 d{i + 1}:4" for i in range(1, k)]
    lines += ["", f"[policies D{k}]"]
    lines += [f"PRIO 10 DENY src={bot_ip(i)} dst={web}" for i in range(1, k)]
    lines += ["PRIO 0 ALLOW", "", "[subscribers]", f"subscriber site web {WEB_PORT},443",
              "", "[channels]"]
    lines += [f"connect D{i} D{i + 1}" for i in range(1, k)]
    lines += ["", "[inject]"]
    for i in range(1, k):
        lines.append(f"at {start} from user{i} to web dport={WEB_PORT} count={count} "
                     f"label=legit")
        lines.append(f"at {start} from bot{i} to web dport={WEB_PORT} count={count} "
                     f"label={BLOCKED_LABEL}")
    lines += ["", "[hooks]"]
    for dom, policies in ladder.items():
        if policies:
            lines.append(f"rpt D{k} {dom} site at=0 : {' ; '.join(policies)}")
    return "\n".join(lines) + "\n"


def scenario_progressive_firewall(k: int = 3, ladder: dict[str, list[str]] | None = None,
                                  count: int = 10, seed: int = 6) -> MetricsReport:
    topo = build_topology(progressive_firewall_text(k, ladder, count, seed))
    return topo.run()
