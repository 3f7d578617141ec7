"""Hot-loop kernels, backed by the Cython extension when it is built.

``BACKEND`` names the implementation selected at import time.  Setting the
environment variable ``DEEPCLUSTER_PURE_PYTHON=1`` forces the numpy fallback.
The compiled kernels are float32-only; other dtypes always take the fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("DEEPCLUSTER_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not compiled
        _impl = _kernels_py
        BACKEND = "python"


def _pick(arr):
    return _impl if arr.dtype == np.float32 else _kernels_py


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x)
    return _pick(x).im2col(x, kh, kw, stride, pad)


def col2im(cols, B, C, H, W, kh, kw, stride, pad):
    cols = np.ascontiguousarray(cols)
    return _pick(cols).col2im(cols, B, C, H, W, kh, kw, stride, pad)


def maxpool_forward(x, k, stride):
    x = np.ascontiguousarray(x)
    return _pick(x).maxpool_forward(x, k, stride)


def maxpool_backward(dout, arg, H, W, k, stride):
    dout = np.ascontiguousarray(dout)
    return _pick(dout).maxpool_backward(dout, np.ascontiguousarray(arg), H, W, k, stride)
