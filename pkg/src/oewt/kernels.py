"""Kernel selection.

The compiled extension is used when it imports; set ``OEWT_PURE_PYTHON=1`` to
force the numpy fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("OEWT_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def logistic_accumulate(X, theta, a, b, derivs=True, backend=None):
    impl = _impl
    if backend == "python":
        impl = _pykernels
    elif backend == "cython":
        from . import _ckernels as impl
    X = np.ascontiguousarray(X, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return impl.logistic_accumulate(X, theta, a, b, derivs)
