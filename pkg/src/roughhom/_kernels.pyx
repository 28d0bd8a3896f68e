# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for the sparse trilinear form."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()


def trilinear_apply(const int64_t[::1] c, const int64_t[::1] a, const int64_t[::1] b,
                    const double[::1] val, const double[:, ::1] U,
                    const double[:, ::1] V, double[:, ::1] out):
    """out[r, c] += val * U[r, a] * V[r, b] over all stored entries."""
    cdef Py_ssize_t r, j, nnz = val.shape[0], R = U.shape[0]
    with nogil:
        for r in range(R):
            for j in range(nnz):
                out[r, c[j]] += val[j] * U[r, a[j]] * V[r, b[j]]


def trilinear_matrix(const int64_t[::1] c, const int64_t[::1] a, const int64_t[::1] b,
                     const double[::1] val, const double[::1] u, double[:, ::1] out):
    """out[c, b] += val * u[a]; the matrix of v -> b(u, v)."""
    cdef Py_ssize_t j, nnz = val.shape[0]
    cdef double ua
    with nogil:
        for j in range(nnz):
            ua = u[a[j]]
            if ua != 0.0:
                out[c[j], b[j]] += val[j] * ua
