import numpy as np
import pytest

from exinhawkes.model import ExInParams

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_params():
    """Two marks with every kind of interaction present."""
    return ExInParams.from_matrices(
        mu=[0.4, 0.25],
        alpha=[[0.3, 0.0], [0.2, 0.4]],
        gamma=[[0.0, 0.5], [0.0, 0.0]],
        eta=[1.5, 0.8],
        phi=[2.0, 1.0],
    )
