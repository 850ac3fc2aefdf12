"""Shared fixtures and the acceptance-criteria result reporter.

Every test named ``test_criterion_NN_*`` in test_acceptance.py gets exactly
one PASS/FAIL line in the terminal summary, independent of output capture.
"""

import re

import pytest

_ACCEPTANCE_RESULTS = {}
_CRITERION_RE = re.compile(r"test_criterion_(\d+)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    if item.module.__name__ != "test_acceptance":
        return
    match = _CRITERION_RE.match(item.name)
    if not match:
        return
    doc = (item.function.__doc__ or "").strip().splitlines()
    label = doc[0] if doc else item.name
    _ACCEPTANCE_RESULTS[int(match.group(1))] = (report.passed, label)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_ACCEPTANCE_RESULTS):
        passed, label = _ACCEPTANCE_RESULTS[num]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {label}")
