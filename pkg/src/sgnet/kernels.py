"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback. Set ``SGN_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
if not os.environ.get("SGN_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND: str = _impl.BACKEND


def _c(x):
    return np.ascontiguousarray(x)


def im2col(xp, kh, kw, stride, impl=None):
    return (impl or _impl).im2col(_c(xp), kh, kw, stride)


def col2im(cols, padded_shape, kh, kw, stride, impl=None):
    return (impl or _impl).col2im(_c(cols), tuple(padded_shape), kh, kw, stride)


def maxpool_forward(x, window, stride, impl=None):
    return (impl or _impl).maxpool_forward(_c(x), window, stride)


def maxpool_backward(grad_out, argmax, input_shape, impl=None):
    return (impl or _impl).maxpool_backward(_c(grad_out), _c(argmax), tuple(input_shape))


def patch_extrema(padded, patch, minimize, valid_h, valid_w, impl=None):
    if padded.dtype not in (np.float32, np.float64):
        padded = padded.astype(np.float64)
    return (impl or _impl).patch_extrema(_c(padded), patch, bool(minimize), valid_h, valid_w)


def jacobi_eigh(a, tol, max_sweeps, impl=None):
    return (impl or _impl).jacobi_eigh(a, float(tol), int(max_sweeps))


def backends():
    """All importable backends, fallback first."""
    found = [_pykernels]
    try:
        from . import _ckernels

        found.append(_ckernels)
    except ImportError:
        pass
    return found
