"""Per-criterion reporting for the acceptance suite.

Tests marked ``@pytest.mark.criterion(number, title, budget=seconds)`` are
grouped by number; the terminal summary prints one PASS/FAIL line per
criterion (all of its tests passed and their combined runtime is within
the budget).
"""
from collections import defaultdict

import pytest

_TITLES = {}
_BUDGETS = {}
_RESULTS = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, budget=None): acceptance criterion")


_PENDING = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    # setup time counts too: module fixtures carry the expensive runs
    elapsed, ok = _PENDING.get(item.nodeid, (0.0, True))
    elapsed += rep.duration
    ok = ok and (rep.passed or (rep.when != "call" and rep.outcome == "passed"))
    _PENDING[item.nodeid] = (elapsed, ok)
    if rep.when == "teardown":
        number, title = mark.args[:2]
        _TITLES[number] = title
        if mark.kwargs.get("budget") is not None:
            _BUDGETS[number] = mark.kwargs["budget"]
        del _PENDING[item.nodeid]
        _RESULTS[number].append((item.name, "passed" if ok else "failed", elapsed))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        runs = _RESULTS[number]
        elapsed = sum(d for _, _, d in runs)
        budget = _BUDGETS.get(number)
        failed = [name for name, outcome, _ in runs if outcome != "passed"]
        over = budget is not None and elapsed > budget
        status = "PASS" if not failed and not over else "FAIL"
        limit = f" / budget {budget:g}s" if budget is not None else ""
        detail = ""
        if failed:
            detail += " failing: " + ", ".join(failed)
        if over:
            detail += " over runtime budget"
        tr.write_line(f"criterion {number:>2} [{_TITLES[number]}]: {status} ({elapsed:.2f}s{limit}){detail}")
