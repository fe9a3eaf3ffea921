import numpy as np
import pytest

from kinslab.grid import Sector, build_velocity_grid


@pytest.fixture(scope="session")
def grid8():
    return build_velocity_grid(8, 6.0)


@pytest.fixture(scope="session")
def axisym8(grid8):
    return Sector(grid8, "axisym")


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


_CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion; echoed in the summary."""
    def record(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        _CRITERIA.append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
