import sys

import numpy as np
import pytest

from cqlearn import qcore

KET0 = np.array([1.0, 0.0])
KET1 = np.array([0.0, 1.0])
KETP = np.array([1.0, 1.0]) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def proj(v):
    return qcore.pure_state(v)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
