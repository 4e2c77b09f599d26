import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qne.model import generate_scenario

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small():
    """Default Q=3, N=8, P=1 draw used by most unit tests."""
    return generate_scenario(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance summary: test_acceptance.py records one line per criterion here.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
