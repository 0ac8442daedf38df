"""Per-tick counters and their CSV form."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field

from ..errors import InvariantError

COUNTERS = (
    "dropped_at_source_edge",
    "dropped_in_transit",
    "dropped_at_dp_network",
    "dropped_at_dp_app",
    "delivered",
    "packet_in_count",
    "controller_msgs_processed",
)
OUTCOMES = COUNTERS[:5]


def link_column(a: str, b: str) -> str:
    return f"link_bytes:{a}-{b}"


@dataclass
class MetricsReport:
    links: list[str]
    rows: list[dict[str, int]] = field(default_factory=list)
    injected: int = 0
    in_flight: int = 0
    # domain -> traffic label -> packets dropped inside that domain's network
    drops_by_domain: dict[str, dict[str, int]] = field(default_factory=dict)
    # (packet id, label) of every request the data provider granted / refused
    granted: list[tuple[int, str]] = field(default_factory=list)
    refused: list[tuple[int, str]] = field(default_factory=list)
    log: list[str] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return ["tick", *COUNTERS, *self.links]

    @property
    def totals(self) -> dict[str, int]:
        out = {c: 0 for c in self.columns[1:]}
        for row in self.rows:
            for c in out:
                out[c] += row[c]
        return out

    def __getitem__(self, counter: str) -> int:
        return self.totals[counter]

    def link_bytes(self, a: str, b: str) -> int:
        col = link_column(*sorted((a, b)))
        return self.totals[col]

    def check_conservation(self) -> None:
        t = self.totals
        settled = sum(t[c] for c in OUTCOMES)
        if settled + self.in_flight != self.injected:
            raise InvariantError(
                f"conservation broken: {settled} settled + {self.in_flight} in flight "
                f"!= {self.injected} injected")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([row["tick"], *(row[c] for c in self.columns[1:])])
        totals = self.totals
        w.writerow(["TOTALS", *(totals[c] for c in self.columns[1:])])
        return buf.getvalue()


class MetricsCollector:
    def __init__(self, links: list[str]):
        self.report = MetricsReport(links)
        self._current: dict[str, int] | None = None
        self._drops: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))

    def open_tick(self, tick: int) -> None:
        self._current = {"tick": tick, **{c: 0 for c in self.report.columns[1:]}}

    def close_tick(self) -> None:
        self.report.rows.append(self._current)
        self._current = None

    def bump(self, counter: str, n: int = 1) -> None:
        self._current[counter] += n

    def network_drop(self, counter: str, domain: str, label: str) -> None:
        self.bump(counter)
        self._drops[domain][label] += 1

    def finish(self) -> MetricsReport:
        self.report.drops_by_domain = {d: dict(sorted(v.items()))
                                       for d, v in sorted(self._drops.items())}
        return self.report
