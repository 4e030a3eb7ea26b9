import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

_acceptance_results: dict[str, bool] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in str(item.fspath):
        _acceptance_results[item.name] = report.passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in _acceptance_results.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}")


@pytest.fixture
def small_instance():
    """3x2 transport instance with its independently computed fixed point.

    Expected values were produced by oracles.naive_sinkhorn (12000 plain
    scaling iterations, fsum-compensated) at epsilon = 5 with uniform
    marginals; the oracle's own marginal error was below 2e-16.
    """
    return {
        "cost": np.array([[0.1, 0.9], [0.5, 0.5], [0.8, 0.2]]),
        "mu": np.array([1 / 3, 1 / 3, 1 / 3]),
        "nu": np.array([0.5, 0.5]),
        "epsilon": 5.0,
        "plan": np.array(
            [
                [0.32675558870625815, 0.00657774462707513],
                [0.15879922906282912, 0.17453410427050420],
                [0.01444518223091267, 0.31888815110242064],
            ]
        ),
        "row_costs": np.array(
            [0.03859552903499344, 0.16666666666666666, 0.07533377600521426]
        ),
        "row_max": np.array(
            [0.32675558870625815, 0.17453410427050420, 0.31888815110242064]
        ),
    }
