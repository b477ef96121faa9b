import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record a one-line verdict per acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def walk_windows():
    """Random-walk lookbacks and continuations for calibration-dependent tests."""
    r = np.random.default_rng(7)
    X = np.cumsum(r.normal(size=(200, 24, 3)), axis=1) * 0.2
    Y = X[:, -1:, :] + np.cumsum(r.normal(size=(200, 12, 3)), axis=1) * 0.2
    return X, Y
