import numpy as np
import pytest

from ymhlab.algebra import adjoint_representation, su2


@pytest.fixture(scope="session")
def s():
    return su2()


@pytest.fixture(scope="session")
def rep(s):
    return adjoint_representation(s)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def criterion():
    """``criterion(k, ok, detail)`` records one acceptance line and fails the test when ``ok`` is false."""

    def record(k, ok, detail):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
