import numpy as np
import pytest

from rungelab.elliptic import assemble, constant_coefficients
from rungelab.geometry import build_grid
from rungelab.runge import assemble_A, singular_system


@pytest.fixture(scope="session")
def dom32():
    return build_grid(32)


@pytest.fixture(scope="session")
def dom32_bottom():
    return build_grid(32, gamma_side="S")


@pytest.fixture(scope="session")
def lap32(dom32):
    return assemble(dom32, constant_coefficients(dom32))


@pytest.fixture(scope="session")
def lap32_bottom(dom32_bottom):
    return assemble(dom32_bottom, constant_coefficients(dom32_bottom))


@pytest.fixture(scope="session")
def system_bottom(lap32_bottom):
    return singular_system(assemble_A(lap32_bottom, seed=1))


@pytest.fixture(scope="session")
def system_full(lap32):
    return singular_system(assemble_A(lap32, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.append((props["criterion"], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_CRITERIA, key=lambda c: int(c[0].split()[0])):
        terminalreporter.write_line(f"{status} criterion {name}")
