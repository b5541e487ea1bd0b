"""Per-criterion pass/fail summary for the acceptance suite.

Tests marked ``@pytest.mark.criterion(n, "title")`` are grouped by ``n``; a
criterion passes when every test in its group passes.  Measured values
attached with ``record_property`` are echoed next to the verdict.
"""
from collections import defaultdict

import pytest

_results = defaultdict(list)
_titles = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    _titles[n] = title
    if report.when == "call" or (report.when == "setup" and not report.passed):
        details = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        _results[n].append((item.name, report.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_results):
        rows = _results[n]
        ok = all(outcome == "passed" for _, outcome, _ in rows)
        tr.write_line(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {_titles[n]}")
        for name, outcome, details in rows:
            tr.write_line(f"    {outcome:7s} {name}" + (f"  ({details})" if details else ""))
