import math

import numpy as np
import pytest

from bvloc import catalog


@pytest.fixture(scope="session")
def sphere():
    return catalog.build("sphere_dh")


@pytest.fixture(scope="session")
def sphere2():
    return catalog.build("sphere_dh", {"k": 2})


@pytest.fixture(scope="session")
def cohft():
    return catalog.build("sphere_cohft")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sphere_points(rng, count=5):
    return np.column_stack([rng.uniform(0.3, math.pi - 0.3, count), rng.uniform(0.2, 6.0, count)])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
