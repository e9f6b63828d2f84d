import numpy as np
import pytest

from aequity.dataset import FeatureDataset


def make_dataset(n=200, d=4, groups=("A", "B"), seed=0, outcome_rate=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    g = np.array([groups[i % len(groups)] for i in range(n)])
    y = (rng.random(n) < outcome_rate).astype(float)
    return FeatureDataset.build([f"p{i}" for i in range(n)], x, {"group": g}, {"outcome": y})


@pytest.fixture
def small_ds():
    return make_dataset()


def fd_grad(f, flat, eps=1e-5):
    """Central finite-difference gradient of scalar ``f`` over ``flat``, in place."""
    g = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
