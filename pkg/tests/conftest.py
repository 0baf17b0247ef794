import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ggnam import backend  # noqa: E402

# criterion number -> (status, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(params=["python", "compiled"])
def kernel_backend(request):
    """Run a test once per kernel implementation, restoring the active one afterwards."""
    try:
        k = backend.get(request.param)
    except ImportError:
        pytest.skip("compiled kernels not built")
    saved = backend.kernels
    backend.kernels = k
    yield request.param
    backend.kernels = saved


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {status:7s} {detail}")
