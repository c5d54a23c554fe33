from pathlib import Path

import pytest

from icsrange.range import reference_run

FIXTURES = Path(__file__).resolve().parent / "fixtures"

_criteria: dict[str, str] = {}


@pytest.fixture(scope="session")
def clean_run():
    """Ten simulated minutes without attack activity."""
    return reference_run(600.0, seed=0)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.failed or (report.when == "call" and name not in _criteria):
        _criteria[name] = "FAIL" if report.failed else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _criteria.items():
        terminalreporter.write_line(f"{verdict}  {name}")
