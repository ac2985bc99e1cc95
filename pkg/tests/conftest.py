import numpy as np
import pytest

from adiaflow import flows, problems


@pytest.fixture(scope="session")
def circle():
    return problems.get_problem("circle")


@pytest.fixture(scope="session")
def circle_plain():
    return problems.get_problem("circle_plain")


@pytest.fixture(scope="session")
def grid():
    return flows.TimeGrid(12.0, 1200)


@pytest.fixture(scope="session")
def circle_path(circle, grid):
    xm, xp = flows.default_endpoints(circle)
    return flows.integrate_base_flow(circle, xm, xp, grid)


@pytest.fixture(scope="session")
def ellipse_path(grid):
    setup = problems.get_problem("ellipse")
    xm, xp = flows.default_endpoints(setup)
    return setup, flows.integrate_base_flow(setup, xm, xp, grid)


@pytest.fixture(scope="session")
def plain_path(circle_plain, grid):
    xm, xp = flows.default_endpoints(circle_plain)
    return flows.integrate_base_flow(circle_plain, xm, xp, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
