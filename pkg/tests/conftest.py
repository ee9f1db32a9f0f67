import numpy as np
import pytest

from scrl.env import EnvConfig, RegionMap, uniform_eta


@pytest.fixture
def tiny_env():
    cells = np.ones((8, 8), dtype=int)
    cells[:, 6:] = 2
    return EnvConfig(RegionMap(cells, 2), horizon=100, v_max=1, eta=uniform_eta([(2, 4)]))


@pytest.fixture
def chain_mdp():
    from scrl.oracle import TinyMDP

    # 3-state chain: action 0 moves right (sticky), action 1 moves left
    P = np.zeros((3, 2, 3))
    P[0, 0] = [0.2, 0.8, 0.0]
    P[1, 0] = [0.0, 0.2, 0.8]
    P[2, 0] = [0.0, 0.0, 1.0]
    P[0, 1] = [1.0, 0.0, 0.0]
    P[1, 1] = [0.8, 0.2, 0.0]
    P[2, 1] = [0.0, 0.8, 0.2]
    R = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
    labels = (frozenset({1}), frozenset({1, 2}), frozenset({2}))
    return TinyMDP(P, R, labels, np.array([1.0, 0.0, 0.0]), 0.9, 2)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion, shown in the terminal summary."""

    def record(number, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
