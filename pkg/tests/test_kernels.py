import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visualid import _pykernels, kernels

try:
    from visualid import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


@needs_ext
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(1, 5), st.floats(0.1, 50), st.integers(0, 2**31))
def test_backends_agree(n, m, d, beta, seed):
    rng = np.random.default_rng(seed)
    X, C, G = rng.normal(size=(n, d)), rng.normal(size=(m, d)), rng.normal(size=(n, d))
    py = _pykernels.soft_assign_forward(X, C, beta)
    cy = _ckernels.soft_assign_forward(X, C, beta)
    for a, b in zip(py, cy):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    W, D, _ = py
    for a, b in zip(_pykernels.soft_assign_backward(X, C, W, D, G, beta),
                    _ckernels.soft_assign_backward(X, C, W, D, G, beta)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)
    ip, dp = _pykernels.nearest_codeword(X, C)
    ic, dc = _ckernels.nearest_codeword(X, C)
    np.testing.assert_array_equal(np.asarray(ip), np.asarray(ic))
    np.testing.assert_allclose(dp, dc, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("mod", [_pykernels, pytest.param(_ckernels, marks=needs_ext)], ids=["numpy", "cython"])
def test_nearest_ties_pick_lowest_index(mod):
    C = np.array([[1.0], [-1.0], [1.0]])
    idx, _ = mod.nearest_codeword(np.array([[0.0], [1.0]]), C)
    assert list(np.asarray(idx)) == [0, 0]


def test_pure_python_switch():
    env = dict(os.environ, VISUALID_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import visualid.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_dispatch_accepts_non_contiguous(rng):
    X = rng.normal(size=(4, 6))[:, ::2]
    C = rng.normal(size=(5, 3))
    W, _, M = kernels.soft_assign_forward(X, C, 2.0)
    np.testing.assert_allclose(W.sum(axis=1), 1.0)
    np.testing.assert_allclose(M, W @ C)
