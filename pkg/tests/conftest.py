import numpy as np
import pytest

from critmp import workspace as ws


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def empty_env():
    return ws.empty_world(10.0, 16)


@pytest.fixture(scope="session")
def se2():
    return ws.se2_rect(0.8, 0.2)


@pytest.fixture(scope="session")
def hinged_robot():
    return ws.hinged()


def segment_plan(points, theta=0.0):
    """Straight-line waypoints at a fixed heading, handy for criticality tests."""
    return [np.array([x, y, theta]) for x, y in points]


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
