import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from threadpoolctl import threadpool_limits

from sinkhorn_mpc.linear_mpc import LinearPlant

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, message); filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, tuple[bool, str]] = {}


@pytest.fixture(autouse=True, scope="session")
def _single_thread_blas():
    # bitwise determinism and timing ratios are only meaningful at a fixed thread count
    with threadpool_limits(limits=1):
        yield


@pytest.fixture
def scalar_plant():
    return LinearPlant(1.0, 0.1)


@pytest.fixture
def planar_plant():
    return LinearPlant(np.array([[1.2, 0.13], [-0.05, 1.1]]), 0.1 * np.eye(2))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        ok, msg = ACCEPTANCE_LINES[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {msg}")
