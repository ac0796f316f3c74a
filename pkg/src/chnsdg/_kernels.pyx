# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element kernels; same contracts as ``_kernels_py``."""
import numpy as np


def convection_local(const double[:, ::1] W, const double[:, :, ::1] w,
                     const double[:, ::1] Nv, const double[:, :, :, ::1] dNv):
    cdef Py_ssize_t nel = W.shape[0], nq = W.shape[1], n = Nv.shape[1]
    cdef Py_ssize_t k, q, a, b
    cdef double g, wx, wy
    out = np.zeros((nel, n, n))
    cdef double[:, :, ::1] C = out
    for k in range(nel):
        for q in range(nq):
            wx = W[k, q] * w[k, q, 0]
            wy = W[k, q] * w[k, q, 1]
            for b in range(n):
                g = wx * dNv[k, q, b, 0] + wy * dNv[k, q, b, 1]
                for a in range(n):
                    C[k, a, b] += g * Nv[q, a]
    return out


def velocity_gradients(const double[:, :, ::1] U, const double[:, :, :, ::1] dNv):
    cdef Py_ssize_t nel = dNv.shape[0], nq = dNv.shape[1], n = dNv.shape[2]
    cdef Py_ssize_t k, q, a, c
    cdef double s0, s1
    out = np.empty((nel, nq, 2, 2))
    cdef double[:, :, :, ::1] G = out
    for k in range(nel):
        for q in range(nq):
            for c in range(2):
                s0 = 0.0
                s1 = 0.0
                for a in range(n):
                    s0 += U[k, c, a] * dNv[k, q, a, 0]
                    s1 += U[k, c, a] * dNv[k, q, a, 1]
                G[k, q, c, 0] = s0
                G[k, q, c, 1] = s1
    return out


def velocity_values(const double[:, :, ::1] U, const double[:, ::1] Nv):
    cdef Py_ssize_t nel = U.shape[0], nq = Nv.shape[0], n = Nv.shape[1]
    cdef Py_ssize_t k, q, a
    cdef double s0, s1
    out = np.empty((nel, nq, 2))
    cdef double[:, :, ::1] V = out
    for k in range(nel):
        for q in range(nq):
            s0 = 0.0
            s1 = 0.0
            for a in range(n):
                s0 += U[k, 0, a] * Nv[q, a]
                s1 += U[k, 1, a] * Nv[q, a]
            V[k, q, 0] = s0
            V[k, q, 1] = s1
    return out


def weighted_product_local(const double[:, :, ::1] Wv, const double[:, ::1] Nv, const double[:, ::1] N1):
    cdef Py_ssize_t nel = Wv.shape[0], nq = Wv.shape[1], nc = Wv.shape[2]
    cdef Py_ssize_t na = Nv.shape[1], ni = N1.shape[1], m = na * ni
    cdef Py_ssize_t k, q, c, a, i, j
    cdef double s
    # the basis products do not depend on the element
    outer_arr = (np.asarray(Nv)[:, :, None] * np.asarray(N1)[:, None, :]).reshape(nq, m)
    cdef const double[:, ::1] O = outer_arr
    out = np.zeros((nel, nc, m))
    cdef double[:, :, ::1] B = out
    for k in range(nel):
        for c in range(nc):
            for q in range(nq):
                s = Wv[k, q, c]
                for j in range(m):
                    B[k, c, j] += s * O[q, j]
    return out.reshape(nel, nc, na, ni)
