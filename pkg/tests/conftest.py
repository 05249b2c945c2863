import pytest

from railguard.stations import example_station

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def station():
    return example_station()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
