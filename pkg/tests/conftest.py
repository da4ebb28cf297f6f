"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import pytest

_criteria = {}
_outcomes = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker and marker.args:
            _criteria[item.nodeid] = marker.args


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _outcomes.get(report.nodeid, "PASS")
        _outcomes[report.nodeid] = "PASS" if report.passed and prev == "PASS" else "FAIL"
        if report.skipped:
            _outcomes[report.nodeid] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(_criteria.items(), key=lambda kv: int(kv[1][0][2:]))
    for nodeid, (code, text) in order:
        terminalreporter.write_line(f"{_outcomes.get(nodeid, 'NOT RUN'):7} {code:5} {text}")
