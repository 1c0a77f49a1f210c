import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None or (report.when != "call" and report.outcome == "passed"):
        return
    n, text = mark
    _criteria.setdefault(n, (text, []))[1].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, outcomes = _criteria[n]
        status = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {text}")
