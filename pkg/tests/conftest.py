import sys

import numpy as np
import pytest

from lgshmm.lgss import SsmModel, solve_steady_state
from lgshmm.quantizer import build_grid

# Two-state benchmark used throughout; Q and R are covariances.
PAPER_A = [[0.8, 0.2], [0.5, 0.3]]
PAPER_C = [[1.0, 1.0]]
PAPER_Q_VAR = 0.1
PAPER_R_VAR = 0.01


def paper_model() -> SsmModel:
    return SsmModel(PAPER_A, PAPER_C, [np.sqrt(PAPER_Q_VAR)] * 2, [np.sqrt(PAPER_R_VAR)])


@pytest.fixture(scope="session")
def paper_ssm():
    return paper_model()


@pytest.fixture(scope="session")
def paper_stats(paper_ssm):
    return solve_steady_state(paper_ssm)


@pytest.fixture(scope="session")
def paper_grid(paper_stats):
    return build_grid(paper_stats, 5.0, [64, 64], [1024])


@pytest.fixture(scope="session")
def small_grid(paper_stats):
    return build_grid(paper_stats, 5.0, [8, 8], [16])


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
