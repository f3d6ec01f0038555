import numpy as np
import pytest

from czopt.circuit import CircuitParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def params():
    return CircuitParams()


@pytest.fixture(scope="session")
def uncoupled():
    return CircuitParams().uncoupled()


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one line per acceptance criterion; printed after the run."""

    def record(number, title, ok, detail):
        ACCEPTANCE[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
