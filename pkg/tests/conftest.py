import pytest

from meanfield.geometry import surface_catalog
from meanfield.green import GreenFunction


@pytest.fixture(scope="session")
def disk():
    return surface_catalog("disk")


@pytest.fixture(scope="session")
def cylinder():
    return surface_catalog("cylinder", {"L": 2.0})


@pytest.fixture(scope="session")
def cap():
    return surface_catalog("cap", {"theta0": 1.5707963267948966})


@pytest.fixture(scope="session")
def disk_green(disk):
    return GreenFunction(disk, "disk-images")


@pytest.fixture(scope="session")
def cylinder_green(cylinder):
    return GreenFunction(cylinder, "cylinder-series")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
