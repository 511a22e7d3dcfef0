import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from gfl.graph import Graph
from gfl.taskgen import FamilyConfig


def random_graph(rng, n, p=0.3, h=4, K=2):
    upper = np.triu(rng.random((n, n)) < p, 1)
    A = (upper | upper.T).astype(float)
    labels = np.arange(n) % K
    return Graph(A, rng.normal(size=(n, h)), labels)


@st.composite
def graphs(draw, min_n=2, max_n=12):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**31 - 1))
    p = draw(st.floats(0.05, 0.9))
    return random_graph(np.random.default_rng(seed), n, p)


def path_graph(n, h=2):
    A = np.zeros((n, n))
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 1
    return Graph(A, np.ones((n, h)), np.zeros(n, dtype=int))


# a small family used by the trainer / cli tests: fast to train on
TINY_FAMILY = FamilyConfig(num_classes=2, nodes_per_class=(8, 10), p_in=0.4, p_out=0.05,
                           feature_dim=4, separation=3.0, noise=0.5, n_train=4, n_val=2,
                           n_test=2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)
