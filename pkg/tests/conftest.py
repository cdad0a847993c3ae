import numpy as np
import pytest

from phaseslide.harness.config import builtin_scenario
from phaseslide.harness.workflow import prepare_certificate

_CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_CRITERIA, key=lambda s: s[0]):
        terminalreporter.write_line(line[1])


@pytest.fixture
def record_criterion():
    """``record_criterion(label, passed, detail)`` adds a line to the final summary."""
    def record(label, passed, detail):
        line = f"criterion {label}: {'PASS' if passed else 'FAIL'} -- {detail}"
        print(line)
        _CRITERIA.append((label, line))
        return passed
    return record


@pytest.fixture(scope="session")
def scenario():
    return builtin_scenario("scenario-1d-eradication")


@pytest.fixture(scope="session")
def scenario_inputs(scenario):
    """Certificate inputs of the reference scenario, pilot run included."""
    return prepare_certificate(scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
