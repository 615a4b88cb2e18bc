import numpy as np
import pytest

from rayflow.gaussian import Rng
from rayflow.schedule import make_linear_schedule


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def sched():
    return make_linear_schedule(16, 0.05, 0.5)


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
