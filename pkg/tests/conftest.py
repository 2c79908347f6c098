import numpy as np
import pytest

from entclass import qsim


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bases3():
    return qsim.build_basis_set(3)


@pytest.fixture(scope="session")
def bases4():
    return qsim.build_basis_set(4)


_REPORT: list = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one (criterion, verdict, detail) line per acceptance criterion."""
    return _REPORT


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(_REPORT):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}")
