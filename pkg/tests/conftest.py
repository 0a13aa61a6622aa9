import logging
import sys

import numpy as np
import pytest

from pathprune.flops import make_buckets
from pathprune.space import toy_space


@pytest.fixture(autouse=True)
def _quiet_sparse_bucket_warnings():
    logging.getLogger("pathprune").setLevel(logging.ERROR)
    yield


@pytest.fixture(scope="session")
def space():
    return toy_space()


@pytest.fixture(scope="session")
def buckets(space):
    return make_buckets(space, 5)


@pytest.fixture(scope="session")
def small_space():
    """Two blocks, depths {0, 1}: 11 664 paths, cheap to enumerate."""
    return toy_space(num_blocks=2, depths=(0, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
