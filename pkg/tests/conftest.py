from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def fixtures_dir():
    return Path(__file__).resolve().parent.parent / "fixtures"


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(k.split()[0].rstrip("ab")), k)):
        ok, _, detail = RESULTS[key]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {key:30s} {detail}")
