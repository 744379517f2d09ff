import numpy as np
import pytest

from wdruc.system import six_bus, uncertainty_box


@pytest.fixture(scope="session")
def six():
    system, fc = six_bus()
    return system, fc.aligned(system), uncertainty_box(system, fc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
