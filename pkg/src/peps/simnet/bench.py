"""Controller load benchmark: packet_in handling with and without LTR traffic.

The controller has four worker threads.  Each tick every thread can handle a
seeded number of messages, drawn independently of the load so that runs with
different LTR loads see the same capacity (common random numbers).  Flow
setup requests arrive faster than the controller can serve them and share a
single FIFO queue with location ticket requests, so every LTR served costs
one flow setup that tick.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..dataplane import PacketHeader, Protocol
from ..errors import Rejection
from ..location import issue_ticket, make_ltr
from .engine import Topology, build_topology

THREADS = 4
THREAD_CAPACITY = (20, 30)
WINDOW = 200
CHUNK = 1000


def bench_topology_text(switches: int = 32, hosts_per_leaf: int = 2, zones: int = 4,
                        seed: int = 1) -> str:
    """One domain shaped as a binary tree; hosts hang off the leaves."""
    if switches < 1:
        raise ValueError("need at least one switch")
    lines = ["[topology]", f"seed {seed}"]
    lines += [f"switch t{i} D" for i in range(1, switches + 1)]
    lines += [f"link t{i // 2}:{2 + i % 2} t{i}:1" for i in range(2, switches + 1)]
    leaves = [i for i in range(1, switches + 1) if 2 * i > switches]
    zone_ports: dict[int, list[str]] = {z: [] for z in range(zones)}
    n = 0
    for leaf in leaves:
        for k in range(hosts_per_leaf):
            n += 1
            port = 10 + k
            lines.append(f"host h{n} 10.{n // 250}.{n % 250}.1 t{leaf}:{port}")
            zone_ports[leaf % zones].append(f"t{leaf}:{port}")
    lines += ["", "[zones]"]
    for z, ports in zone_ports.items():
        if ports:
            sec = "secure" if z == 0 else "nonsecure"
            lines.append(f'zone Z{z} {sec} "floor {z}" {" ".join(ports)}')
    return "\n".join(lines) + "\n"


@dataclass
class BenchSamples:
    ltr_load: int
    flow_load: int
    flows: list[int]          # packet_in messages handled per tick
    messages: list[int]       # all controller messages handled per tick
    ltr_served: int
    tickets_issued: int

    @property
    def total_flows(self) -> int:
        return sum(self.flows)


def _capacity(seed: int, window: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    lo, hi = THREAD_CAPACITY
    return rng.integers(lo, hi + 1, size=(window, THREADS)).sum(axis=1)


def _ltr_arrivals(seed: int, load: int, window: int) -> np.ndarray:
    """Arrival ticks of ``load`` LTRs; a larger load extends a smaller one."""
    rng = np.random.default_rng([seed, 1])
    parts, have = [], 0
    while have < load:
        parts.append(rng.integers(0, window, size=CHUNK))
        have += CHUNK
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)[:load]


def bench_packet_in(topology: Topology, ltr_load: int, flow_load: int = 150,
                    window: int = WINDOW, seed: int | None = None) -> BenchSamples:
    seed = topology.seed if seed is None else seed
    (ctrl,) = topology.controllers.values()
    hosts = sorted(topology.hosts.values(), key=lambda h: h.name)
    for h in hosts:
        # locate every host once so LTRs can be answered
        ctrl.handle_packet_in(h.switch, h.port, PacketHeader(h.ip, hosts[0].ip, 1, 1,
                                                             Protocol.UDP))
    capacity = _capacity(seed, window)
    arrivals = np.bincount(_ltr_arrivals(seed, ltr_load, window), minlength=window)
    pick = np.random.default_rng([seed, 2])
    queue: deque = deque()
    flows, messages = [], []
    served = issued = 0
    sport = 1024
    for t in range(window):
        ctrl.tick(t)
        src = pick.integers(0, len(hosts), size=flow_load)
        dst = (src + pick.integers(1, len(hosts), size=flow_load)) % len(hosts)
        for s, d in zip(src.tolist(), dst.tolist()):
            sport = sport + 1 if sport < 65535 else 1024
            queue.append(("flow", hosts[s], hosts[d].ip, sport))
        who = pick.integers(0, len(hosts), size=int(arrivals[t]))
        for i in who.tolist():
            queue.append(("ltr", hosts[i]))
        done = n_flows = 0
        while queue and done < capacity[t]:
            msg = queue.popleft()
            done += 1
            if msg[0] == "flow":
                _, h, dst_ip, sp = msg
                ctrl.handle_packet_in(h.switch, h.port,
                                      PacketHeader(h.ip, dst_ip, sp, 80, Protocol.TCP))
                n_flows += 1
            else:
                h = msg[1]
                served += 1
                try:
                    issue_ticket(ctrl, make_ltr(h.ip, h.keypair, t), h.ip)
                    issued += 1
                except Rejection:
                    pass
        flows.append(n_flows)
        messages.append(done)
    return BenchSamples(ltr_load, flow_load, flows, messages, served, issued)


def run_bench(switches: int = 32, ltr_load: int = 1000, flow_load: int = 150,
              window: int = WINDOW, seed: int = 1) -> tuple[BenchSamples, BenchSamples]:
    """Run the benchmark twice: location app idle, then loaded."""
    text = bench_topology_text(switches, seed=seed)
    base = bench_packet_in(build_topology(text), 0, flow_load, window, seed)
    loaded = bench_packet_in(build_topology(text), ltr_load, flow_load, window, seed)
    return base, loaded


def samples_csv(base: BenchSamples, loaded: BenchSamples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tick", "flows_baseline", f"flows_ltr{loaded.ltr_load}",
                "msgs_baseline", f"msgs_ltr{loaded.ltr_load}"])
    for t, row in enumerate(zip(base.flows, loaded.flows, base.messages, loaded.messages)):
        w.writerow([t, *row])
    return buf.getvalue()
