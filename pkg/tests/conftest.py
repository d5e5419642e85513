import os

import numpy as np
import pytest

from cropheight import kernels

_ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--kentland", action="store_true", default=False,
                     help="run the optional field-dataset reproduction (needs CROPHEIGHT_KENTLAND_DIR)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--kentland"):
        return
    skip = pytest.mark.skip(reason="field dataset run is opt-in: pass --kentland")
    for item in items:
        if "kentland" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def report_criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    return kernels.backends()[request.param]


def kentland_dir():
    return os.environ.get("CROPHEIGHT_KENTLAND_DIR")
