"""Collects PASS/FAIL per acceptance criterion for the terminal summary.

Criteria are marked ``@pytest.mark.criterion(id, title=...)``; ids such as
``"6a"`` group under criterion 6, which passes only if all its parts pass.
"""

import re

import pytest

_OUTCOMES: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        key = str(marker.args[0])
        title = marker.kwargs.get("title", item.name)
        previous = _OUTCOMES.get(key, (title, True))[1]
        _OUTCOMES[key] = (title, previous and report.passed)


def _number(key):
    return int(re.match(r"\d+", key).group())


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted({_number(k) for k in _OUTCOMES}):
        parts = sorted(k for k in _OUTCOMES if _number(k) == number)
        ok = all(_OUTCOMES[k][1] for k in parts)
        if parts == [str(number)]:
            title = _OUTCOMES[parts[0]][0]
        else:
            title = "; ".join(f"{k} {'PASS' if _OUTCOMES[k][1] else 'FAIL'} ({_OUTCOMES[k][0]})" for k in parts)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")
