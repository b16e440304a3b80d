import os

import numpy as np
import pytest

from ifdensity.harness.config import RunConfig
from ifdensity.harness.run import Context

# criterion -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def reference_ctx():
    """Reference configuration shared by the acceptance tests (1e6 MC paths)."""
    n = int(os.environ.get("IFDENSITY_ACCEPT_PATHS", "1000000"))
    return Context(RunConfig(mc_n_paths=n))


@pytest.fixture(scope="session")
def small_ctx():
    """Coarse, quick configuration for harness plumbing tests."""
    cfg = RunConfig(T=1.0, dt=5e-4, grid_h=1.0 / 100, mc_n_paths=20_000, store_every=4)
    return Context(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
