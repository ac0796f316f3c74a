"""Element kernels: the compiled extension when available, numpy otherwise.

Set ``CHNS_PURE_PYTHON=1`` to force the numpy implementation.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("CHNS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled

        _impl = _compiled
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def convection_local(W, w, Nv, dNv):
    return _impl.convection_local(_c(W), _c(w), _c(Nv), _c(dNv))


def velocity_gradients(U, dNv):
    return _impl.velocity_gradients(_c(U), _c(dNv))


def velocity_values(U, Nv):
    return _impl.velocity_values(_c(U), _c(Nv))


def weighted_product_local(Wv, Nv, N1):
    # one GEMM against element-independent basis products; BLAS beats the compiled loop here
    return _kernels_py.weighted_product_local(_c(Wv), _c(Nv), _c(N1))
