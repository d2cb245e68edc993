# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for least-squares clients."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def quad_steps(const double[:, :, ::1] gram, const double[:, ::1] atb,
               const double[:, ::1] x0, const double[:, ::1] anchor,
               const double[:, ::1] shift, double step, double rho, int K,
               double[:, :, ::1] path=None):
    cdef Py_ssize_t m = gram.shape[0]
    cdef Py_ssize_t d = gram.shape[1]
    cdef Py_ssize_t i, j, l
    cdef int k
    cdef Py_ssize_t d4
    cdef double s, s0, s1, s2, s3, inv_k = 1.0 / K

    out = np.empty((m, d))
    avg = np.zeros((m, d))
    work = np.empty(d)
    nxt = np.empty(d)
    cdef double[:, ::1] xo = out
    cdef double[:, ::1] xa = avg
    cdef double[::1] x = work
    cdef double[::1] y = nxt
    cdef bint record = path is not None
    d4 = d - d % 4

    with nogil:
        for i in range(m):
            for j in range(d):
                x[j] = x0[i, j]
                if record:
                    path[i, 0, j] = x[j]
            for k in range(K):
                for j in range(d):
                    # four partial sums break the serial add chain
                    s0 = 0.0
                    s1 = 0.0
                    s2 = 0.0
                    s3 = 0.0
                    for l in range(0, d4, 4):
                        s0 = s0 + gram[i, j, l] * x[l]
                        s1 = s1 + gram[i, j, l + 1] * x[l + 1]
                        s2 = s2 + gram[i, j, l + 2] * x[l + 2]
                        s3 = s3 + gram[i, j, l + 3] * x[l + 3]
                    for l in range(d4, d):
                        s0 = s0 + gram[i, j, l] * x[l]
                    s = (s0 + s1) + (s2 + s3)
                    s = s - atb[i, j] + rho * (x[j] - anchor[i, j]) + shift[i, j]
                    y[j] = x[j] - step * s
                for j in range(d):
                    x[j] = y[j]
                    xa[i, j] += y[j]
                    if record:
                        path[i, k + 1, j] = y[j]
            for j in range(d):
                xo[i, j] = x[j]
                xa[i, j] *= inv_k
    return out, avg
