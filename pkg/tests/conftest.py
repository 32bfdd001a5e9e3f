import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ozemu import dispatch

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fresh_stats():
    dispatch.reset_stats()
    yield
    dispatch.reset_stats()


@pytest.fixture(scope="session")
def shim_library(tmp_path_factory):
    from ozemu.shim import build_shim
    return build_shim(tmp_path_factory.mktemp("shim"), force=True)


@pytest.fixture(scope="session")
def gemm_driver(tmp_path_factory):
    from shim_support import build_driver
    return build_driver(tmp_path_factory.mktemp("driver"))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, outcome, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {outcome}  {title}  [{detail}]")
