"""Kernel dispatch: the compiled extension when it imports, numpy otherwise.

Set ``MAGNN_PURE_PYTHON=1`` to force the numpy fallback. Both backends
expose the same five functions and agree to floating-point rounding.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("MAGNN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv1d_forward(xpad, w, stride, dilation=1):
    return _impl.conv1d_forward(_c(xpad), _c(w), int(stride), int(dilation))


def conv1d_backward(g, xpad, w, stride, dilation=1):
    return _impl.conv1d_backward(_c(g), _c(xpad), _c(w), int(stride), int(dilation))


def maxpool1d_forward(x, window, stride):
    return _impl.maxpool1d_forward(_c(x), int(window), int(stride))


def maxpool1d_backward(g, pos, length):
    return _impl.maxpool1d_backward(_c(g), np.ascontiguousarray(pos, dtype=np.int64), int(length))


def topk_mask(a, k):
    return _impl.topk_mask(_c(a), int(k))
