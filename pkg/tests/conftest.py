"""Shared fixtures and the acceptance summary printed after the run."""

from __future__ import annotations

import numpy as np
import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, line: str) -> None:
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
