import numpy as np
import pytest

from graph_deblur.graphs import Graph, build_random_sensor_graph, spectral_decompose


@pytest.fixture
def path2():
    return Graph(np.array([[0.0, 1.0], [1.0, 0.0]]))


@pytest.fixture(scope="session")
def sensor10():
    return build_random_sensor_graph(10, k=3, seed=3)


@pytest.fixture(scope="session")
def sd10(sensor10):
    return spectral_decompose(sensor10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
