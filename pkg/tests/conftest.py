import numpy as np
import pytest

from ponderomotive.core_model import TWO_PI, network_run_params, nominal_params, quantum_run_params
from ponderomotive.detection import nominal_chain, quantum_run_jitter


@pytest.fixture
def nominal():
    return nominal_params()


@pytest.fixture
def network_run():
    return network_run_params()


@pytest.fixture
def quantum_run():
    return quantum_run_params()


@pytest.fixture
def chain():
    return nominal_chain()


@pytest.fixture
def jitter():
    return quantum_run_jitter()


@pytest.fixture
def band():
    """Analysis grid 50-300 kHz in rad/s."""
    return TWO_PI * np.linspace(50e3, 300e3, 501)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
