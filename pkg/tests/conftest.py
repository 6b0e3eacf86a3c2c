import numpy as np
import pytest

from vod import _kernels_py
from vod._backend import compiled_kernels

BACKENDS = [pytest.param(_kernels_py, id="python")]
if compiled_kernels() is not None:
    BACKENDS.append(pytest.param(compiled_kernels(), id="compiled"))


@pytest.fixture(params=BACKENDS)
def kernels(request):
    """Each available kernel module in turn."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
