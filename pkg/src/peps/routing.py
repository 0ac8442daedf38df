"""Switch graph shared by the controllers: ports, host attachments, shortest paths."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass

import networkx as nx

from .errors import InvariantError, UnknownSwitch

IPv4 = ipaddress.IPv4Address


@dataclass(frozen=True)
class Hop:
    switch_id: str
    in_port: int
    out_port: int


@dataclass(frozen=True)
class PortEnd:
    """What sits on the far side of a switch port."""

    kind: str  # "host" or "switch"
    peer: str  # host IP text or switch id
    peer_port: int | None = None


class Fabric:
    def __init__(self):
        self.graph = nx.Graph()
        self.domain_of: dict[str, str] = {}
        self.ports: dict[str, dict[int, PortEnd]] = {}
        self.hosts: dict[IPv4, tuple[str, int]] = {}
        self._paths: dict[tuple[str, str], list[str] | None] = {}

    # construction

    def add_switch(self, switch_id: str, domain_id: str) -> None:
        if switch_id in self.domain_of:
            raise InvariantError(f"switch {switch_id} declared twice")
        self.graph.add_node(switch_id)
        self.domain_of[switch_id] = domain_id
        self.ports[switch_id] = {}

    def _claim(self, switch_id: str, port: int, end: PortEnd) -> None:
        if switch_id not in self.ports:
            raise UnknownSwitch(switch_id)
        if port in self.ports[switch_id]:
            raise InvariantError(f"port {switch_id}:{port} already in use")
        self.ports[switch_id][port] = end

    def add_host(self, ip, switch_id: str, port: int) -> None:
        ip = IPv4(ip)
        if ip in self.hosts:
            raise InvariantError(f"duplicate IP {ip}")
        self._claim(switch_id, port, PortEnd("host", str(ip)))
        self.hosts[ip] = (switch_id, port)

    def move_host(self, ip, switch_id: str, port: int) -> None:
        ip = IPv4(ip)
        old = self.hosts.pop(ip)
        del self.ports[old[0]][old[1]]
        self.add_host(ip, switch_id, port)

    def add_link(self, a: str, pa: int, b: str, pb: int) -> None:
        self._claim(a, pa, PortEnd("switch", b, pb))
        self._claim(b, pb, PortEnd("switch", a, pa))
        if not self.graph.has_edge(a, b):
            self.graph.add_edge(a, b, ports={a: pa, b: pb})
        self._paths.clear()

    # queries

    def switches_in(self, domain_id: str) -> list[str]:
        return [s for s, d in self.domain_of.items() if d == domain_id]

    def domains(self) -> list[str]:
        return list(dict.fromkeys(self.domain_of.values()))

    def is_interdomain(self, a: str, b: str) -> bool:
        return self.domain_of[a] != self.domain_of[b]

    def is_host_port(self, switch_id: str, port: int) -> bool:
        end = self.ports.get(switch_id, {}).get(port)
        return end is None or end.kind == "host"

    def is_edge(self, switch_id: str) -> bool:
        return any(e.kind == "host" or self.domain_of[e.peer] != self.domain_of[switch_id]
                   for e in self.ports[switch_id].values())

    def host_domain(self, ip) -> str | None:
        att = self.hosts.get(IPv4(ip))
        return None if att is None else self.domain_of[att[0]]

    def check_connected(self) -> None:
        for dom in self.domains():
            sub = self.graph.subgraph(self.switches_in(dom))
            if sub.number_of_nodes() and not nx.is_connected(sub):
                raise InvariantError(f"domain {dom} is not connected")
        for a, b in self.graph.edges:
            if self.is_interdomain(a, b) and not (self.is_edge(a) and self.is_edge(b)):
                raise InvariantError(f"inter-domain link {a}-{b} not on edge switches")

    def _switch_path(self, src: str, dst: str) -> list[str] | None:
        key = (src, dst)
        if key not in self._paths:
            try:
                self._paths[key] = nx.shortest_path(self.graph, src, dst)
            except nx.NetworkXNoPath:
                self._paths[key] = None
        return self._paths[key]

    def route(self, switch_id: str, in_port: int, dst_ip) -> list[Hop] | None:
        """Hops from ``switch_id`` to the host owning ``dst_ip``; None if unroutable."""
        att = self.hosts.get(IPv4(dst_ip))
        if att is None:
            return None
        path = self._switch_path(switch_id, att[0])
        if path is None:
            return None
        hops = []
        for here, nxt in zip(path, path[1:]):
            ports = self.graph.edges[here, nxt]["ports"]
            hops.append(Hop(here, in_port, ports[here]))
            in_port = ports[nxt]
        hops.append(Hop(att[0], in_port, att[1]))
        return hops

    def peer_of(self, switch_id: str, port: int) -> PortEnd | None:
        return self.ports.get(switch_id, {}).get(port)
