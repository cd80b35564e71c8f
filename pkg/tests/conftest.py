import numpy as np
import pytest

from latent_sbdo import hull
from latent_sbdo.ffd import FreeFormDeformation, sample_dataset
from latent_sbdo.problem import HullConstraints


@pytest.fixture(scope="session")
def hull_spec():
    return hull.HullSpec()


@pytest.fixture(scope="session")
def baseline(hull_spec):
    return hull.make_hull(hull_spec)


@pytest.fixture(scope="session")
def lattices(hull_spec):
    return hull.default_lattices(hull_spec)


@pytest.fixture(scope="session")
def deformation(baseline, lattices):
    return FreeFormDeformation(baseline, lattices).fit()


@pytest.fixture(scope="session")
def constraints(baseline, hull_spec):
    return HullConstraints(baseline, hull_spec)


@pytest.fixture(scope="session")
def feasible(constraints):
    def check(x):
        violations, degenerate = constraints(x)
        return not degenerate and not any(v > 0 for v in violations.values())
    return check


@pytest.fixture(scope="session")
def hull_dataset(baseline, lattices, feasible):
    """Desk-scale feasible dataset shared by the slower tests."""
    return sample_dataset(baseline, lattices, 1000, seed=0, feasibility=feasible)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion: ``criterion(n, passed, detail)``; asserts ``passed``."""
    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
