import os

import numpy as np
import pytest

os.environ.setdefault("BCSM_THREADS", "1")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_balanced_layout(rng, max_q=3, max_size=4):
    """Random balanced layout with 1..max_q factors and sizes 2..max_size."""
    from bcsm.layout import NestedLayout

    Q = int(rng.integers(1, max_q + 1))
    return NestedLayout(tuple(int(v) for v in rng.integers(2, max_size + 1, Q)))


def random_pd_tau(rng, layout, tau0=None):
    """Random tau inside the positive-definite region."""
    from bcsm.covariance import lower_bound

    tau = np.zeros(layout.Q + 1)
    tau[0] = rng.uniform(0.5, 2.0) if tau0 is None else tau0
    for q in range(1, layout.Q + 1):
        lb = lower_bound(layout, tau, q)
        tau[q] = lb + rng.uniform(0.05, 1.0) * (abs(lb) + 0.5)
    return tau


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
