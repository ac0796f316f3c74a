"""Pure-numpy element kernels (reference implementation and fallback)."""
from __future__ import annotations

import numpy as np


def convection_local(W, w, Nv, dNv):
    """``C[k, a, b] = sum_q W[k, q] (w[k, q] . dNv[k, q, b]) Nv[q, a]``."""
    G = W[..., None] * np.matmul(dNv, w[..., None])[..., 0]  # (nel, nq, nloc)
    return np.matmul(Nv.T, G)


def velocity_gradients(U, dNv):
    """``g[k, q, c, j] = sum_a U[k, c, a] dNv[k, q, a, j]``."""
    return np.matmul(U[:, None], dNv)


def velocity_values(U, Nv):
    """``v[k, q, c] = sum_a U[k, c, a] Nv[q, a]``."""
    return np.matmul(Nv, U.transpose(0, 2, 1))


def weighted_product_local(Wv, Nv, N1):
    """``B[k, c, a, i] = sum_q Wv[k, q, c] Nv[q, a] N1[q, i]``."""
    nq, na = Nv.shape
    ni = N1.shape[1]
    outer = (Nv[:, :, None] * N1[:, None, :]).reshape(nq, na * ni)
    return np.matmul(Wv.transpose(0, 2, 1), outer).reshape(Wv.shape[0], Wv.shape[2], na, ni)
