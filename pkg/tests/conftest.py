import pytest

from peps.policy import HeaderUniverse


@pytest.fixture
def small_universe():
    return HeaderUniverse(
        src_ips=("10.0.0.1", "10.0.0.2", "10.0.0.9", "10.0.1.1"),
        dst_ips=("10.0.0.5", "10.0.2.10", "10.0.0.1", "10.0.3.3"),
        src_ports=(40000,),
        dst_ports=(22, 80, 443, 5432),
    )


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
