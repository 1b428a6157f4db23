import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tidalstream.data import SynthConfig, generate_synthetic

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def table1_sample():
    """Default-geometry synthetic catalogue with mild streaming beyond 400."""
    return generate_synthetic(SynthConfig(n=328, lambda_kind="hinge", beta=0.01, rho=400.0,
                                          seed=3))


@pytest.fixture(scope="session")
def null_sample():
    return generate_synthetic(SynthConfig(n=120, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
