# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the row softmax and the masked entropy sums.

Every function mirrors ``_kernels_py`` exactly in signature; inputs are
C-contiguous 2-D arrays (masks as uint8).
"""

import numpy as np
from cython cimport floating
from libc.math cimport exp, log

BACKEND = "cython"


def softmax_rows(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], i, j
    cdef double m, total
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((n, w), dtype=dtype)
    cdef floating[:, ::1] y = out
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, w):
                if x[i, j] > m:
                    m = x[i, j]
            total = 0.0
            for j in range(w):
                y[i, j] = <floating>exp(x[i, j] - m)
                total += y[i, j]
            for j in range(w):
                y[i, j] = <floating>(y[i, j] / total)
    return out


def softmax_rows_grad(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], w = y.shape[1], i, j
    cdef double dot
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((n, w), dtype=dtype)
    cdef floating[:, ::1] gx = out
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(w):
                dot += gy[i, j] * y[i, j]
            for j in range(w):
                gx[i, j] = <floating>(y[i, j] * (gy[i, j] - dot))
    return out


def masked_xlogx_sum(floating[:, ::1] p, const unsigned char[:, ::1] mask, double eps):
    cdef Py_ssize_t n = p.shape[0], w = p.shape[1], i, j
    cdef double total = 0.0, v
    with nogil:
        for i in range(n):
            for j in range(w):
                if mask[i, j]:
                    v = p[i, j]
                    total += v * log(v if v > eps else eps)
    return total


def masked_xlogx_grad(floating[:, ::1] p, const unsigned char[:, ::1] mask,
                      double eps, double g):
    cdef Py_ssize_t n = p.shape[0], w = p.shape[1], i, j
    cdef double v, log_eps = log(eps)
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((n, w), dtype=dtype)
    cdef floating[:, ::1] gp = out
    with nogil:
        for i in range(n):
            for j in range(w):
                if mask[i, j]:
                    v = p[i, j]
                    if v > eps:
                        gp[i, j] = <floating>((log(v) + 1.0) * g)
                    else:
                        gp[i, j] = <floating>(log_eps * g)
    return out


def clamped_log(floating[:, ::1] x, double eps):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], i, j
    cdef double v
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((n, w), dtype=dtype)
    cdef floating[:, ::1] y = out
    with nogil:
        for i in range(n):
            for j in range(w):
                v = x[i, j]
                y[i, j] = <floating>log(v if v > eps else eps)
    return out


def clamped_log_grad(floating[:, ::1] x, double eps, floating[:, ::1] g):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], i, j
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((n, w), dtype=dtype)
    cdef floating[:, ::1] gx = out
    with nogil:
        for i in range(n):
            for j in range(w):
                if x[i, j] > eps:
                    gx[i, j] = <floating>(g[i, j] / x[i, j])
                else:
                    gx[i, j] = 0
    return out
