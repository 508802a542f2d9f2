# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise identity-score kernel."""

import numpy as np

cimport numpy as cnp


def identity_score_matrix(const cnp.int64_t[:, ::1] units):
    """Count identical entries for every row pair of an (n, p) unit matrix.

    Returns a symmetric (n, n) int32 matrix with zeros on the diagonal.
    """
    cdef Py_ssize_t n = units.shape[0]
    cdef Py_ssize_t p = units.shape[1]
    out_arr = np.zeros((n, n), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, s
    cdef cnp.int32_t c
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                c = 0
                for s in range(p):
                    if units[i, s] == units[j, s]:
                        c += 1
                out[i, j] = c
                out[j, i] = c
    return out_arr
