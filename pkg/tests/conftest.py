import numpy as np
import pytest

from asynczo.core import BlockLayout, RngStream
from asynczo.objectives import QuadraticObjective, quadratic_handle


@pytest.fixture
def rng():
    return RngStream(12345, 0)


@pytest.fixture
def half_norm_sq():
    """f(x) = 0.5 ||x||^2 on two scalar blocks."""
    layout = BlockLayout([1, 1])
    return quadratic_handle(QuadraticObjective(np.eye(2)), layout)


def mc_mean_and_se(samples):
    samples = np.asarray(samples, dtype=np.float64)
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(len(samples))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
