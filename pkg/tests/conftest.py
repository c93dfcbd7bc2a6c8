import re

import numpy as np
import pytest
from hypothesis import settings

from qnndse.files import sample_path

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def samples():
    return sample_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_criteria: dict[int, tuple[str, str, str]] = {}
_NAME = re.compile(r"test_c(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    match = _NAME.search(report.nodeid)
    if "test_acceptance.py" not in report.nodeid or not match:
        return
    if report.when != "call" and report.outcome == "passed":
        return
    verdict = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, report.outcome.upper())
    detail = dict(report.user_properties).get("detail", "")
    _criteria[int(match.group(1))] = (match.group(2).replace("_", " "), verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        name, verdict, detail = _criteria[num]
        terminalreporter.write_line(f"criterion {num:>2} {verdict}  {name}: {detail}")
