# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``. Same signatures, same math."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double DIST_EPS = 1e-12


def soft_assign_forward(double[:, ::1] X, double[:, ::1] C, double beta):
    cdef Py_ssize_t B = X.shape[0], N = C.shape[0], m = X.shape[1]
    cdef Py_ssize_t b, n, j
    cdef double acc, t, mx, total
    W_arr = np.empty((B, N), dtype=np.float64)
    D_arr = np.empty((B, N), dtype=np.float64)
    M_arr = np.zeros((B, m), dtype=np.float64)
    cdef double[:, ::1] W = W_arr
    cdef double[:, ::1] D = D_arr
    cdef double[:, ::1] M = M_arr
    with nogil:
        for b in range(B):
            mx = -1e300
            for n in range(N):
                acc = 0.0
                for j in range(m):
                    t = X[b, j] - C[n, j]
                    acc = acc + t * t
                D[b, n] = sqrt(acc + DIST_EPS)
                t = -beta * D[b, n]
                W[b, n] = t
                if t > mx:
                    mx = t
            total = 0.0
            for n in range(N):
                W[b, n] = exp(W[b, n] - mx)
                total = total + W[b, n]
            for n in range(N):
                W[b, n] = W[b, n] / total
                for j in range(m):
                    M[b, j] = M[b, j] + W[b, n] * C[n, j]
    return W_arr, D_arr, M_arr


def soft_assign_backward(double[:, ::1] X, double[:, ::1] C, double[:, ::1] W,
                         double[:, ::1] D, double[:, ::1] G, double beta):
    cdef Py_ssize_t B = X.shape[0], N = C.shape[0], m = X.shape[1]
    cdef Py_ssize_t b, n, j
    cdef double s, gw, coef, t
    gX_arr = np.zeros((B, m), dtype=np.float64)
    gC_arr = np.zeros((N, m), dtype=np.float64)
    GW_arr = np.empty(N, dtype=np.float64)
    cdef double[:, ::1] gX = gX_arr
    cdef double[:, ::1] gC = gC_arr
    cdef double[::1] GW = GW_arr
    with nogil:
        for b in range(B):
            s = 0.0
            for n in range(N):
                gw = 0.0
                for j in range(m):
                    gw = gw + G[b, j] * C[n, j]
                GW[n] = gw
                s = s + W[b, n] * gw
            for n in range(N):
                coef = -beta * W[b, n] * (GW[n] - s) / D[b, n]
                for j in range(m):
                    t = X[b, j] - C[n, j]
                    gX[b, j] = gX[b, j] + coef * t
                    gC[n, j] = gC[n, j] + W[b, n] * G[b, j] - coef * t
    return gX_arr, gC_arr


def nearest_codeword(double[:, ::1] X, double[:, ::1] C):
    cdef Py_ssize_t B = X.shape[0], N = C.shape[0], m = X.shape[1]
    cdef Py_ssize_t b, n, j, best
    cdef double acc, t, bestd
    idx_arr = np.empty(B, dtype=np.int64)
    d2_arr = np.empty(B, dtype=np.float64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] d2 = d2_arr
    with nogil:
        for b in range(B):
            best = 0
            bestd = 1e308
            for n in range(N):
                acc = 0.0
                for j in range(m):
                    t = X[b, j] - C[n, j]
                    acc = acc + t * t
                if acc < bestd:
                    bestd = acc
                    best = n
            idx[b] = best
            d2[b] = bestd
    return idx_arr, d2_arr
