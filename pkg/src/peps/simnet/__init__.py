"""Deterministic multi-domain network simulation."""

from .engine import (
    DataProviderStub,
    EventKind,
    Flight,
    Host,
    SimEvent,
    Topology,
    build_topology,
    inject,
    run,
)
from .metrics import COUNTERS, MetricsReport, link_column
from .scenario import ScenarioSpec, parse_scenario

__all__ = [
    "COUNTERS",
    "DataProviderStub",
    "EventKind",
    "Flight",
    "Host",
    "MetricsReport",
    "ScenarioSpec",
    "SimEvent",
    "Topology",
    "build_topology",
    "inject",
    "link_column",
    "parse_scenario",
    "run",
]
