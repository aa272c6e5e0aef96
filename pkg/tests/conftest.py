import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ncolab.scenarios import builtin_spec
from ncolab.seeding import derive_stream
from ncolab.simgen import simulate

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_dataset(scenario="hte", setting="primary", n=None, seed=0, **table_kwargs):
    spec = builtin_spec(scenario, setting, **table_kwargs)
    if n is not None:
        spec = dataclasses.replace(spec, n=n)
    return simulate(spec, derive_stream(seed, "tests", scenario, setting))


@pytest.fixture(scope="session")
def hte_primary():
    return make_dataset("hte", "primary")


@pytest.fixture(scope="session")
def nohte_primary():
    return make_dataset("nohte", "primary")


@pytest.fixture(scope="session")
def big_hte():
    return make_dataset("hte", "primary", n=200_000, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
