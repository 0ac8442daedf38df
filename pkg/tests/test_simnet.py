import ipaddress
from collections import Counter

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from peps.dataplane import PacketHeader, Protocol
from peps.errors import InvariantError, ParseError, UnknownHost
from peps.simnet import COUNTERS, EventKind, build_topology, inject, parse_scenario, run
from peps.simnet.bench import bench_packet_in, bench_topology_text, run_bench, samples_csv
from peps.simnet.scenario import merge_config
from peps.simnet.scenarios import (
    BLOCKED_LABEL,
    canned_text,
    progressive_firewall_text,
    scenario_progressive_firewall,
)

# requestor domain R (one edge switch) in front of provider domain P
SPLIT = """
[topology]
seed 2
switch r1 R
switch p1 P
host good 10.1.0.1 r1:1
host bad  10.1.0.2 r1:2
host dp   10.0.0.5 p1:2
link r1:3 p1:1

[subscribers]
subscriber web dp 80

[channels]
connect P R

[inject]
at 5 from good to dp count=60 every=0 label=good
at 5 from bad to dp count=40 every=0 label=bad
"""
BLOCK_BAD = "[hooks]\nrpt P R web at=0 : PRIO 5 DENY src=10.1.0.2 dst=10.0.0.5 dport=80\n"


def totals(report):
    return {k: v for k, v in report.totals.items() if v}


# ---------------------------------------------------------------- parsing


@pytest.mark.parametrize("text, line", [
    ("switch s1 A\n", 1),
    ("[topology]\nswitch s1 A\nhost h 10.0.0.1 s1\n", 3),
    ("[topology]\n[nonsense]\n", 2),
    ("[policies]\n", 1),
    ("[topology]\nhost h 10.0.0.300 s1:1\n", 2),
    ("[inject]\nat 1 from a to b dport=x\n", 2),
    ("[inject]\nat 1 from a to b label=x label=y\n", 2),
    ("[hooks]\nfly away\n", 2),
    ("[hooks]\nrpt A B sub\n", 2),
    ("[hooks]\nlbac A B sub\n", 2),
    ("[zones]\nzone Z1 medium \"x\" s1:1\n", 2),
    ("[policies A]\nPRIO x ALLOW\n", 2),
    ("[channels]\nconnect A B latency=0\n", 2),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_scenario(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_parse_round_up_of_all_sections():
    spec = parse_scenario(canned_text("lbac_realtime"))
    assert spec.seed == 7 and spec.seed_given
    assert set(spec.switches.values()) == {"A", "B"}
    assert [z.zone_id for z in spec.zones] == ["Z1", "Z2"]
    assert spec.zones[0].label == "Lab, second floor"
    assert spec.subscribers[0].ports == frozenset({5432})
    assert [p.priority for p in spec.inner["db"]] == [5, 1]
    assert spec.hooks[0].kind == "lbac" and spec.hooks[0].options == {"zones": "Z1"}


def test_hook_policies_follow_spaced_colon():
    spec = parse_scenario("[hooks]\nmove h s1:4 at=3\n"
                          "pt db at=2 : PRIO 5 DENY src=10.0.0.1 ; PRIO 4 ALLOW  # c\n")
    move, pt = spec.hooks
    assert move.args == ("h", "s1:4") and move.tick == 3
    assert [p.priority for p in pt.policies] == [5, 4] and pt.tick == 2


def test_config_overlay_replaces_scalars_and_appends_lists():
    base = parse_scenario(SPLIT)
    cfg = parse_scenario("[topology]\nseed 9\n[inject]\nat 1 from good to dp\n"
                         "[hooks]\nuntil 50\n")
    merged = merge_config(base, cfg)
    assert merged.seed == 9 and merged.until == 50
    assert len(merged.injections) == 3
    assert merge_config(base, parse_scenario("[hooks]\nuntil 4\n")).seed == 2
    with pytest.raises(ParseError):
        merge_config(base, parse_scenario("[topology]\nswitch r1 R\n"))


# ---------------------------------------------------------------- building


def test_two_domain_spec_builds_two_controllers():
    topo = build_topology(canned_text("lbac_realtime"))
    assert sorted(topo.controllers) == ["A", "B"]
    assert sum(len(c.switches) for c in topo.controllers.values()) == 4
    assert topo.controllers["B"].geo.zone_map[("b1", 1)].zone_id == "Z1"
    assert topo.controllers["A"].channels["B"] is topo.controllers["B"].channels["A"]


def test_duplicate_ip_is_an_invariant_error():
    with pytest.raises(InvariantError, match="line 4"):
        build_topology("[topology]\nswitch s1 A\nhost a 10.0.0.1 s1:1\n"
                       "host b 10.0.0.1 s1:2\n")


@pytest.mark.parametrize("text, needle", [
    ("[topology]\nswitch s1 A\nswitch s2 A\n", "connected"),
    ("[topology]\nswitch s1 A\nhost a 10.0.0.1 s9:1\n", "unknown switch"),
    ("[topology]\nswitch s1 A\nlink s1:1 s2:1\n", "unknown switch"),
    ("[topology]\nswitch s1 A\n[zones]\nzone Z1 secure \"a\" s1:1\n"
     "zone Z2 secure \"b\" s1:1\n", "two zones"),
    ("[topology]\nswitch s1 A\n[policies Q]\nPRIO 0 ALLOW\n", "unknown domain"),
])
def test_bad_topologies(text, needle):
    with pytest.raises(InvariantError, match=needle):
        build_topology(text)


def test_thirty_two_switch_domain_builds():
    topo = build_topology(bench_topology_text(32))
    (ctrl,) = topo.controllers.values()
    assert len(ctrl.switches) == 32
    assert len(topo.hosts) == 32


# ---------------------------------------------------------------- injection


def test_inject_queues_and_orders_by_insertion():
    topo = build_topology(SPLIT)
    pkt = PacketHeader("10.1.0.1", "10.0.0.5", 1000, 80, Protocol.TCP)
    first = inject(topo, 3, "good", pkt)
    second = inject(topo, 3, "good", pkt)
    assert first.kind is EventKind.INJECT and first.tick == 3
    assert first.seq < second.seq


def test_inject_from_unknown_host():
    topo = build_topology(SPLIT)
    with pytest.raises(UnknownHost):
        inject(topo, 0, "nobody", PacketHeader("10.1.0.1", "10.0.0.5", 1, 80))


def test_no_injections_leaves_every_counter_zero():
    report = run(build_topology(SPLIT.split("[inject]")[0]), until_tick=10)
    assert len(report.rows) == 11
    assert all(v == 0 for v in report.totals.values())
    assert report.to_csv().splitlines()[-1] == "TOTALS," + ",".join(["0"] * 8)


def test_csv_layout():
    report = run(build_topology(SPLIT))
    lines = report.to_csv().splitlines()
    assert lines[0] == "tick," + ",".join(COUNTERS) + ",link_bytes:p1-r1"
    assert len(lines) == len(report.rows) + 2
    assert lines[-1].startswith("TOTALS,")


def test_one_tick_per_hop():
    text = ("[topology]\nswitch s1 A\nswitch s2 A\nswitch s3 A\n"
            "host a 10.0.0.1 s1:1\nhost b 10.0.0.2 s3:1\n"
            "link s1:2 s2:1\nlink s2:2 s3:2\n[inject]\nat 4 from a to b\n")
    report = run(build_topology(text))
    delivered_at = [r["tick"] for r in report.rows if r["delivered"]]
    # arrives at s1 on tick 4, s2 on 5, s3 on 6, host on 7
    assert delivered_at == [7]
    assert report.link_bytes("s1", "s2") == report.link_bytes("s2", "s3") == 1


def test_second_identical_flow_skips_the_controller():
    topo = build_topology(SPLIT.split("[inject]")[0] +
                          "[inject]\nat 1 from good to dp sport=4000 count=2 every=5\n")
    report = run(topo)
    # one packet_in per domain for the first packet, none for the second
    assert report["packet_in_count"] == 2
    assert report["delivered"] == 2


# ---------------------------------------------------------------- outcomes


def _expected_split():
    """Count the injections an RPT denying the bad host catches, by hand."""
    spec = parse_scenario(SPLIT)
    hosts = {h.name: h.ip for h in spec.hosts}
    bad = ipaddress.IPv4Address("10.1.0.2")
    blocked = sum(i.count for i in spec.injections if hosts[i.src_host] == bad and i.dport == 80)
    return blocked, sum(i.count for i in spec.injections) - blocked


def test_rpt_blocks_at_requestor_edge():
    blocked, passed = _expected_split()
    assert (blocked, passed) == (40, 60)
    report = run(build_topology(SPLIT + BLOCK_BAD))
    assert report["dropped_at_source_edge"] == blocked
    assert report.link_bytes("r1", "p1") == passed
    assert report["delivered"] == passed
    assert report.drops_by_domain == {"R": {"bad": blocked}}


def test_bandwidth_saved_only_when_something_is_blocked():
    plain = run(build_topology(SPLIT))
    blocking = run(build_topology(SPLIT + BLOCK_BAD))
    idle = run(build_topology(
        SPLIT + "[hooks]\nrpt P R web at=0 : PRIO 5 DENY src=10.1.0.99 dst=10.0.0.5 dport=80\n"))
    assert blocking.link_bytes("r1", "p1") < plain.link_bytes("r1", "p1")
    assert idle.link_bytes("r1", "p1") == plain.link_bytes("r1", "p1")


def test_disabling_outer_layer_moves_denials_to_the_app():
    text = canned_text("lbac_realtime")
    on = run(build_topology(text))
    off_spec = parse_scenario(text + "\n[hooks]\ndisable_outer at=0\n")
    off = run(build_topology(off_spec))
    caught = on["dropped_at_source_edge"]
    assert caught == 20
    assert {label for _, label in on.refused} == set()
    # the same requests are granted either way
    assert sorted(on.granted) == sorted(off.granted)
    assert off["dropped_at_dp_app"] - on["dropped_at_dp_app"] == caught
    assert off.link_bytes("a1", "b2") > on.link_bytes("a1", "b2")


def test_until_leaves_packets_in_flight_and_still_conserves():
    report = run(build_topology(SPLIT), until_tick=5)
    assert report.in_flight > 0
    report.check_conservation()


def test_small_budget_builds_a_backlog():
    fast = run(build_topology(SPLIT))
    slow = run(build_topology(SPLIT, budget=3))
    assert fast["delivered"] == slow["delivered"] == 100
    assert len(slow.rows) > len(fast.rows)
    # the budget is per controller, and there are two
    assert max(r["controller_msgs_processed"] for r in slow.rows) == 6


def test_topology_runs_once():
    topo = build_topology(SPLIT)
    topo.run()
    with pytest.raises(InvariantError):
        topo.run()


def test_pinned_victim_cannot_be_spoofed():
    text = SPLIT.split("[subscribers]")[0] + (
        "[zones]\nzone Z1 secure \"desk\" r1:1 r1:2\n"
        "[subscribers]\nsubscriber web dp 80\n"
        "[inject]\n"
        "at 0 from good to dp label=locate\n"
        "at 2 from bad to dp src_ip=10.1.0.1 count=25 label=spoof\n"
        "at 2 from good to dp count=25 label=victim\n"
        "[hooks]\npin good at=1\n")
    topo = build_topology(text)
    report = run(topo)
    assert report.drops_by_domain == {"R": {"spoof": 25}}
    assert report["delivered"] == 26
    geo = topo.controllers["R"].geo
    assert {str(ip): (a.switch_id, a.port_id) for ip, a in geo.attachment.items()} == {
        "10.1.0.1": ("r1", 1)}
    assert topo.controllers["R"].pins


# ---------------------------------------------------------------- canned scenarios


def test_lbac_mobility_cuts_off_moved_host():
    report = run(build_topology(canned_text("lbac_mobility")))
    labels = Counter(label for _, label in report.granted)
    assert labels == {"in-lab": 10}
    assert report.drops_by_domain == {"B": {"in-lobby": 10}}
    assert sum("RPT ACCEPT" in line for line in report.log) == 2


def test_tickets_scenario_reasons():
    topo = build_topology(canned_text("tickets"))
    report = run(topo)
    assert Counter(label for _, label in report.granted) == {"alice": 5}
    refused = Counter(label for _, label in report.refused)
    assert refused == {"replay": 5, "no-ticket": 5, "locate": 2, "expired": 2}
    (stub,) = topo.stubs
    reasons = Counter(line.split()[-1] for line in stub.log)
    assert reasons == {"granted": 5, "IpMismatch": 5, "NoTicket": 7, "Expired": 2}
    assert any("LTR alice -> REJECT IpMismatch" in line for line in report.log)


def test_dos_scenario():
    topo = build_topology(canned_text("dos"))
    report = run(topo)
    pt_lines = [line for line in report.log if " PT " in line]
    assert Counter(line.split(" ", 4)[-1] for line in pt_lines) == {
        "ACCEPT": 10, "REJECT RateLimited": 4}
    assert topo.controllers["A"].oracle_runs == 10
    assert report.drops_by_domain == {"A": {"noisy": 5}, "C": {"flood": 200}}
    assert report.link_bytes("c2", "a1") == 20


def test_firewall_ladder_canned_file_matches_generator():
    canned = canned_text("firewall_ladder")
    body = canned[canned.index("[topology]"):]
    assert body == progressive_firewall_text(3)


def test_firewall_chain_drops_blocked_class_upstream():
    report = scenario_progressive_firewall(3)
    assert report.drops_by_domain == {"D1": {BLOCKED_LABEL: 10}, "D2": {BLOCKED_LABEL: 10}}
    assert report["dropped_at_source_edge"] == 20
    assert report["delivered"] == 20


def test_firewall_chain_longer():
    report = scenario_progressive_firewall(5, count=4)
    drops = [report.drops_by_domain.get(f"D{i}", {}).get(BLOCKED_LABEL, 0) for i in range(1, 6)]
    assert drops == [4, 4, 4, 4, 0]


def test_empty_ladder_same_as_no_ladder():
    a = scenario_progressive_firewall(3, ladder={})
    b = scenario_progressive_firewall(3, ladder={"D1": [], "D2": []})
    assert a.to_csv() == b.to_csv()
    assert a.drops_by_domain == {"D3": {BLOCKED_LABEL: 20}}


def test_ladder_entry_out_of_scope_rejected_rest_applied():
    ladder = {"D1": ["PRIO 5 DENY src=10.1.0.66 dst=10.2.0.1"],
              "D2": ["PRIO 5 DENY src=10.2.0.66 dst=10.3.0.10 dport=80"]}
    report = scenario_progressive_firewall(3, ladder=ladder)
    assert any("RPT REJECT ScopeViolation" in line for line in report.log)
    assert report.drops_by_domain == {"D2": {BLOCKED_LABEL: 10}, "D3": {BLOCKED_LABEL: 10}}


def test_chain_needs_two_domains():
    with pytest.raises(ValueError):
        progressive_firewall_text(1)


# ---------------------------------------------------------------- properties


HOSTS = ("alice", "mallory", "printer", "dp")


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(st.tuples(st.integers(0, 12), st.sampled_from(HOSTS), st.sampled_from(HOSTS),
                          st.sampled_from([5432, 80, 631]), st.integers(1, 4),
                          st.booleans()),
                max_size=8),
       st.one_of(st.none(), st.integers(0, 15)))
def test_conservation_and_determinism(injections, until):
    base = canned_text("lbac_realtime").split("[inject]")[0]
    lines = [f"at {t} from {a} to {b} dport={p} count={c}"
             + (" proto=udp" if udp else "")
             for t, a, b, p, c, udp in injections if a != b]
    text = base + "[inject]\n" + "\n".join(lines) + "\n[hooks]\nlbac A B db zones=Z1 at=0\n"
    first = run(build_topology(text), until)
    second = run(build_topology(text), until)
    settled = sum(first[c] for c in COUNTERS[:5])
    assert settled + first.in_flight == first.injected
    assert first.to_csv() == second.to_csv()
    assert first.log == second.log


@settings(max_examples=15, deadline=None)
@given(st.lists(st.sampled_from(["alice", "mallory"]), min_size=1, max_size=12))
def test_outer_layer_never_changes_the_grant_set(senders):
    base = canned_text("lbac_realtime").split("[inject]")[0]
    inj = ["at 0 from alice to printer", "at 0 from mallory to printer"]
    inj += [f"at {5 + i} from {s} to dp dport=5432 label={s}{i}" for i, s in enumerate(senders)]
    text = base + "[inject]\n" + "\n".join(inj) + "\n[hooks]\nlbac A B db zones=Z1 at=0\n"
    on = run(build_topology(text))
    off = run(build_topology(text + "disable_outer at=0\n"))
    assert sorted(on.granted) == sorted(off.granted)
    assert on.link_bytes("a1", "b2") <= off.link_bytes("a1", "b2")


# ---------------------------------------------------------------- bench


def test_bench_without_ltr_equals_baseline():
    base, loaded = run_bench(switches=8, ltr_load=0, flow_load=60, window=30)
    assert base.flows == loaded.flows
    assert samples_csv(base, loaded).splitlines()[0] == (
        "tick,flows_baseline,flows_ltr0,msgs_baseline,msgs_ltr0")


def test_bench_degrades_with_load():
    text = bench_topology_text(8)
    runs = [bench_packet_in(build_topology(text), load, flow_load=120, window=40)
            for load in (0, 100, 500, 2000)]
    base = sorted(runs[0].flows)
    for r in runs[1:]:
        assert all(x <= y for x, y in zip(sorted(r.flows), base))
    totals_ = [r.total_flows for r in runs]
    assert totals_ == sorted(totals_, reverse=True) and len(set(totals_)) == 4
    # every served LTR was answered with a real ticket
    assert all(r.tickets_issued == r.ltr_served for r in runs)
    # capacity is shared: served messages do not depend on the LTR load
    assert runs[0].messages == runs[3].messages


def test_format_doc_examples_match_shipped_files():
    import pathlib
    import re
    doc = pathlib.Path(__file__).parents[1] / "docs" / "scenario-format.md"
    blocks = re.findall(r"```\n(#.*?)```", doc.read_text(), re.S)
    assert blocks == [canned_text("lbac_realtime"), canned_text("firewall_ladder")]
