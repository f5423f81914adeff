import numpy as np
import pytest

from coupledpf.models import make_discrete

MIXING_P = [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]
MIXING_G = [1.0, 0.5, 0.25]


def mixing_model(T=4):
    """K=3 strong-mixing model used throughout the tests."""
    return make_discrete(3, MIXING_P, MIXING_G, T)


@pytest.fixture
def k3_model():
    return mixing_model(4)


@pytest.fixture
def two_state_model():
    # K=2, T=1, uniform initial law, potentials (1, 3): pi = (.25, .75)
    return make_discrete(2, [[0.5, 0.5], [0.5, 0.5]], [[1.0, 3.0]], 1, initial=[0.5, 0.5])


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def empirical_law(table, trajectories):
    idx = np.array([table.index_of(x) for x in trajectories])
    return np.bincount(idx, minlength=len(table.probs)) / len(idx)


# One line per acceptance criterion, repeated at the end of the run.
ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
