"""Kernel backend selection.

The compiled Cython kernels are used when the extension was built; otherwise
the numpy fallback is used. ``TINYNINA_BACKEND=python`` forces the fallback,
``TINYNINA_BACKEND=compiled`` makes a missing extension an import error.

:func:`extended_precision` switches the calling thread to ``numpy.longdouble``
arithmetic; kernels then always run on the numpy fallback.
"""
from contextlib import contextmanager
import logging
import os
import threading

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

_BACKENDS = {"python": _kernels_py}
if _kernels_c is not None:
    _BACKENDS["compiled"] = _kernels_c

_active = None
_local = threading.local()

# True where long double carries more mantissa than float64 (x86-64 Linux: 64 vs 53 bits)
HAS_EXTENDED = np.finfo(np.longdouble).eps < np.finfo(np.float64).eps


def working_dtype():
    return getattr(_local, "dtype", np.float64)


@contextmanager
def extended_precision():
    prev = working_dtype()
    _local.dtype = np.longdouble
    try:
        yield
    finally:
        _local.dtype = prev


def available():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch the process-wide kernel backend; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}")
    prev = _active.NAME if _active is not None else None
    _active = _BACKENDS[name]
    return prev


def name():
    return _active.NAME


def _select_default():
    requested = os.environ.get("TINYNINA_BACKEND", "").strip().lower()
    if requested:
        if requested == "compiled" and _kernels_c is None:
            raise ImportError("TINYNINA_BACKEND=compiled but tinynina._kernels is not built")
        set_backend(requested)
    else:
        set_backend("compiled" if _kernels_c is not None else "python")
    log.debug("tinynina kernel backend: %s", _active.NAME)


_select_default()


def _c(a):
    return np.ascontiguousarray(a, dtype=working_dtype())


def _k():
    return _active if working_dtype() is np.float64 else _kernels_py


def im2col(xp, k, stride, ho, wo):
    return _k().im2col(_c(xp), k, stride, ho, wo)


def col2im(cols, c, hp, wp, k, stride, ho, wo):
    return _k().col2im(_c(cols), c, hp, wp, k, stride, ho, wo)


def depthwise_forward(xp, w, b):
    return _k().depthwise_forward(_c(xp), _c(w), _c(b))


def depthwise_backward(xp, w, gout):
    return _k().depthwise_backward(_c(xp), _c(w), _c(gout))


def resample_axis(x, idx, wts, axis):
    return _k().resample_axis(_c(x), np.ascontiguousarray(idx, dtype=np.intp), _c(wts), axis)


def resample_axis_T(g, idx, wts, n_in, axis):
    return _k().resample_axis_T(_c(g), np.ascontiguousarray(idx, dtype=np.intp),
                                   _c(wts), n_in, axis)
