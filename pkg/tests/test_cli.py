import csv
import io

import pytest

from peps.cli import main
from peps.simnet.scenarios import canned_text

LOCAL = "PRIO 10 DENY src=10.0.0.9\nPRIO 0 ALLOW\n"
PT_OK = "SUBSCRIBER db\nSEQ 1\nPRIO 5 DENY src=10.0.0.7 dst=10.0.0.5 dport=80\n"
PT_FLIP = "SUBSCRIBER db\nSEQ 1\nPRIO 50 ALLOW src=10.0.0.9 dst=10.0.0.5 dport=80\n"
RPT_OUT = "SUBSCRIBER db\nDOMAIN B\nSCOPE 10.0.0.5:80\nSEQ 1\nPRIO 5 DENY dst=10.0.0.6\n"


@pytest.fixture
def files(tmp_path):
    def write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def csv_rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_run_writes_csv(files, tmp_path, capsys):
    scn = files("a.scn", canned_text("lbac_realtime"))
    out = tmp_path / "r.csv"
    assert main(["run", scn, "--out", str(out)]) == 0
    rows = csv_rows(out.read_text())
    assert rows[0][:3] == ["tick", "dropped_at_source_edge", "dropped_in_transit"]
    assert rows[-1][0] == "TOTALS" and rows[-1][1] == "20"
    assert capsys.readouterr().out == ""


def test_run_to_stdout_is_deterministic(files, capsys):
    scn = files("a.scn", canned_text("firewall_ladder"))
    main(["run", scn])
    first = capsys.readouterr().out
    main(["run", scn])
    assert capsys.readouterr().out == first
    assert first.startswith("tick,")


def test_run_parse_error_exit_two(files, capsys):
    scn = files("bad.scn", "[topology]\nswitch s1 A\nhost h 10.0.0.1 s1\n")
    assert main(["run", scn]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "bad.scn" in err


def test_run_missing_file_exit_two(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.scn")]) == 2
    assert "nope.scn" in capsys.readouterr().err


def test_run_invariant_exit_three(files, capsys):
    scn = files("dup.scn", "[topology]\nswitch s1 A\nhost a 10.0.0.1 s1:1\n"
                           "host b 10.0.0.1 s1:2\n")
    assert main(["run", scn]) == 3
    assert "duplicate IP" in capsys.readouterr().err


def test_disable_outer_keeps_grant_set(files, tmp_path, capsys):
    scn = files("a.scn", canned_text("lbac_realtime"))
    on, off = tmp_path / "on.csv", tmp_path / "off.csv"
    main(["run", scn, "--out", str(on)])
    err_on = capsys.readouterr().err
    main(["run", scn, "--out", str(off), "--disable-outer"])
    err_off = capsys.readouterr().err
    assert "granted=20" in err_on and "granted=20" in err_off
    assert "refused=0" in err_on and "refused=20" in err_off
    head = csv_rows(on.read_text())[0]
    tot_on = dict(zip(head, csv_rows(on.read_text())[-1]))
    tot_off = dict(zip(head, csv_rows(off.read_text())[-1]))
    assert tot_on["dropped_at_source_edge"] == "20" and tot_off["dropped_at_source_edge"] == "0"
    assert int(tot_on["link_bytes:a1-b2"]) < int(tot_off["link_bytes:a1-b2"])


def test_seed_and_config_override(files, tmp_path, capsys):
    scn = files("a.scn", canned_text("lbac_realtime"))
    cfg = files("c.scn", "[hooks]\nuntil 12\n")
    out = tmp_path / "r.csv"
    assert main(["run", scn, "--config", cfg, "--seed", "3", "--out", str(out)]) == 0
    rows = csv_rows(out.read_text())
    assert rows[-2][0] == "12"  # ticks 0..12, then TOTALS
    bad_cfg = files("b.scn", "[topology]\nswitch b1 B\n")
    assert main(["run", scn, "--config", bad_cfg]) == 2


def test_run_log(files, tmp_path, capsys):
    scn = files("a.scn", canned_text("dos"))
    log = tmp_path / "events.log"
    assert main(["run", scn, "--log", str(log), "--out", str(tmp_path / "x.csv")]) == 0
    assert "REJECT RateLimited" in log.read_text()


def test_validate_accept(files, capsys):
    args = ["validate", "--local", files("l.txt", LOCAL), "--transfer", files("t.txt", PT_OK),
            "--scope", "10.0.0.5:80"]
    assert main(args) == 0
    assert capsys.readouterr().out == "ACCEPT\n"


def test_validate_flip_rejects_with_witness(files, capsys):
    args = ["validate", "--local", files("l.txt", LOCAL), "--transfer", files("t.txt", PT_FLIP),
            "--scope", "10.0.0.5:80"]
    assert main(args) == 1
    out = capsys.readouterr().out.strip()
    assert out == "REJECT Violation witness=10.0.0.9:49152->10.0.0.5:80/icmp"


def test_validate_with_universe_file(files, capsys):
    uni = files("u.txt", "src 10.0.0.9 10.0.0.1\ndst 10.0.0.5\nsport 1000\ndport 80\n"
                         "proto tcp\n")
    args = ["validate", "--local", files("l.txt", LOCAL), "--transfer", files("t.txt", PT_FLIP),
            "--scope", "10.0.0.5:80", "--universe", uni]
    assert main(args) == 1
    assert "witness=10.0.0.9:1000->10.0.0.5:80/tcp" in capsys.readouterr().out


def test_validate_rpt_out_of_scope(files, capsys):
    args = ["validate", "--local", files("l.txt", LOCAL), "--transfer", files("t.txt", RPT_OUT)]
    assert main(args) == 1
    assert capsys.readouterr().out.strip() == "REJECT ScopeViolation"


def test_validate_parse_errors(files, capsys):
    local = files("l.txt", LOCAL)
    assert main(["validate", "--local", files("bad.txt", "PRIO x\n"),
                 "--transfer", files("t.txt", PT_OK), "--scope", "10.0.0.5:80"]) == 2
    assert main(["validate", "--local", local, "--transfer", files("t.txt", PT_OK)]) == 2
    assert main(["validate", "--local", local, "--transfer", files("t2.txt", "SEQ 1\n"),
                 "--scope", "10.0.0.5:80"]) == 2


def test_compile(files, capsys):
    assert main(["compile", "--transfer", files("t.txt", PT_OK), "--scope", "10.0.0.5:80"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["RULE table=2 prio=19999 origin=LocalPT(db) action=DROP src=10.0.0.7 "
                   "dst=10.0.0.5 sport=* dport=80 proto=*"]


def _ticket(files, capsys, now=4, observed=None):
    assert main(["ticket", "request", "--ip", "10.0.0.1", "--key-seed", "alice",
                 "--now", "3"]) == 0
    ltr = files("ltr.txt", capsys.readouterr().out)
    args = ["ticket", "issue", "--ltr", ltr, "--zone", "Z1", "--now", str(now)]
    if observed:
        args += ["--observed-ip", observed]
    code = main(args)
    return code, capsys.readouterr().out


def test_ticket_round_trip(files, capsys):
    code, lt = _ticket(files, capsys)
    assert code == 0 and lt.startswith("LT ip=10.0.0.1 ")
    assert main(["ticket", "verify", "--lt", files("lt.txt", lt), "--now", "10",
                 "--expected-ip", "10.0.0.1"]) == 0
    assert capsys.readouterr().out == "ACCEPT\n"


def test_ticket_tampered_and_expired(files, capsys):
    _, lt = _ticket(files, capsys)
    assert main(["ticket", "verify", "--lt", files("t.txt", lt.replace("zone=Z1", "zone=Z9")),
                 "--now", "10"]) == 1
    assert capsys.readouterr().out == "REJECT BadSignature\n"
    assert main(["ticket", "verify", "--lt", files("lt.txt", lt), "--now", "100"]) == 1
    assert capsys.readouterr().out == "REJECT Expired\n"


def test_ticket_wrong_issuer_and_key(files, capsys):
    _, lt = _ticket(files, capsys)
    path = files("lt.txt", lt)
    assert main(["ticket", "verify", "--lt", path, "--now", "5", "--domain", "B"]) == 1
    assert capsys.readouterr().out == "REJECT BadSignature\n"
    assert main(["ticket", "verify", "--lt", path, "--now", "5",
                 "--expected-key", "00" * 32]) == 1
    assert capsys.readouterr().out == "REJECT KeyMismatch\n"


def test_ticket_issue_refusals(files, capsys):
    code, out = _ticket(files, capsys, observed="10.0.0.2")
    assert code == 1 and out == "REJECT IpMismatch\n"
    code, out = _ticket(files, capsys, now=40)
    assert code == 1 and out == "REJECT StaleRequest\n"


def test_bench(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["bench", "--switches", "8", "--ltr", "300", "--flows", "80", "--window", "20",
                 "--out", str(out)]) == 0
    rows = csv_rows(out.read_text())
    assert rows[0] == ["tick", "flows_baseline", "flows_ltr300", "msgs_baseline", "msgs_ltr300"]
    assert len(rows) == 21
    assert all(int(r[2]) <= int(r[1]) for r in rows[1:])


def test_firewall_chain(capsys):
    assert main(["firewall-chain"]) == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("tick,")
    assert "D1: blocked=10" in captured.err and "D2: blocked=10" in captured.err
    assert main(["firewall-chain", "--emit-scenario"]) == 0
    assert capsys.readouterr().out == canned_text("firewall_ladder").split("\n\n", 1)[1]


def test_firewall_chain_too_short(capsys):
    assert main(["firewall-chain", "--domains", "1"]) == 2


def test_exactly_one_subcommand():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
