"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``VISUALID_PURE_PYTHON=1`` to force the numpy path.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("VISUALID_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def soft_assign_forward(X, C, beta):
    return _impl.soft_assign_forward(_c(X), _c(C), float(beta))


def soft_assign_backward(X, C, W, D, G, beta):
    return _impl.soft_assign_backward(_c(X), _c(C), _c(W), _c(D), _c(G), float(beta))


def nearest_codeword(X, C):
    return _impl.nearest_codeword(_c(X), _c(C))
