import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion the test verifies")
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    by_number = {}
    for label, status, detail in lines:
        terminalreporter.write_line(f"criterion {label}: {status}  {detail}".rstrip())
        by_number.setdefault(label.rstrip("abc"), []).append(status)
    for number in sorted(by_number, key=int):
        statuses = by_number[number]
        if "FAIL" in statuses:
            overall = "FAIL"
        elif all(s == "SKIP" for s in statuses):
            overall = "SKIP"
        else:
            overall = "PASS"
        terminalreporter.write_line(f"criterion {number} overall: {overall}")
