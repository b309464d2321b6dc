import numpy as np
import pytest

from rankbandit.model import ProblemInstance, table1_instance


@pytest.fixture
def table1():
    return table1_instance()


@pytest.fixture
def minimal():
    return ProblemInstance([1.0], [[1.0]], [[0.5]])


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
