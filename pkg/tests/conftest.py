import sys

import numpy as np
import pytest

from visualid.numcore import ParamPacker, finite_diff_check


def check_arrays(loss_of_arrays, arrays, grads, eps=1e-5):
    """Finite-difference check over a list of arrays; returns the report."""
    packer = ParamPacker(arrays)
    return finite_diff_check(lambda flat: loss_of_arrays(packer.unpack(flat)), packer.pack(arrays),
                             packer.pack(grads), eps)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
