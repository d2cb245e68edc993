import numpy as np
import pytest

from cpx.dataio import SyntheticLsSpec, gen_synthetic_ls, gen_synthetic_softmax
from cpx.objectives import FederatedProblem, QuadraticObjective


def scalar_quadratic(a):
    """f(x) = 0.5 (x - a)^2 as a 1x1 least-squares client."""
    return QuadraticObjective(np.array([[1.0]]), np.array([float(a)]))


def scalar_problem(*centres):
    return FederatedProblem([scalar_quadratic(a) for a in centres]).with_optimum()


@pytest.fixture
def symmetric_pair():
    """f1 = 0.5 (x - 1)^2, f2 = 0.5 (x + 1)^2."""
    return scalar_problem(1.0, -1.0)


@pytest.fixture
def shifted_pair():
    """f1 = 0.5 (x - 1)^2, f2 = 0.5 (x - 3)^2."""
    return scalar_problem(1.0, 3.0)


@pytest.fixture(scope="session")
def desk_ls():
    return gen_synthetic_ls(SyntheticLsSpec())[0]


@pytest.fixture(scope="session")
def small_ls():
    return gen_synthetic_ls(SyntheticLsSpec(m=6, n=30, d=5, seed=3))[0]


@pytest.fixture(scope="session")
def desk_softmax():
    return gen_synthetic_softmax()


acceptance_lines = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[acceptance_lines] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(acceptance_lines, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
        print(line)
        request.config.stash[acceptance_lines].append(line)
        assert passed, line

    return record
