import numpy as np
import pytest

from ebsde import Driver, FactorModel, RiskPremiumSpec, TimeGrid


@pytest.fixture
def ex1_model():
    return FactorModel.ou(1.5, 0.8, 0.0)


@pytest.fixture
def power_theta():
    return RiskPremiumSpec.truncated_linear(0.8, 3.0)


@pytest.fixture
def power_model():
    return FactorModel.ou(3.0, 1.3, 0.0)


@pytest.fixture
def power_driver(power_theta):
    return Driver.power(0.5, power_theta)


@pytest.fixture
def grid01():
    return TimeGrid(0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """record(n, ok, detail) stores one acceptance line; the test still asserts ``ok``."""
    def _record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
