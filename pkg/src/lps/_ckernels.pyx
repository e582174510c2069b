# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_pykernels``."""
import numpy as np

from libc.math cimport exp, log, INFINITY

BACKEND = "cython"


def lsap(cost):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef Py_ssize_t[::1] row_of_col = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(n + 1, dtype=np.intp)
    cdef char[::1] used = np.zeros(n + 1, dtype=np.int8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = row_of_col[j0]
            ui = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while True:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    cdef long long[::1] cor = col_of_row
    for j in range(1, n + 1):
        cor[row_of_col[j] - 1] = j - 1
    cdef double total = 0.0
    for i in range(n):
        total += c[i, cor[i]]
    return col_of_row, total


def contrastive(sim, pos, cand, anchors):
    cdef double[:, ::1] s = np.ascontiguousarray(sim, dtype=np.float64)
    cdef char[:, ::1] p = np.ascontiguousarray(pos, dtype=np.int8)
    cdef char[:, ::1] a = np.ascontiguousarray(cand, dtype=np.int8)
    cdef char[::1] anc = np.ascontiguousarray(anchors, dtype=np.int8)
    cdef Py_ssize_t n = s.shape[0]
    grad_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] g = grad_arr
    cdef double[::1] e = np.empty(n)
    cdef Py_ssize_t i, j, n_pos, n_valid = 0
    cdef double m, max_a, max_p, sum_a, sum_p, shift_p, total = 0.0
    for i in range(n):
        if not anc[i]:
            continue
        n_pos = 0
        max_a = -INFINITY
        max_p = -INFINITY
        for j in range(n):
            if a[i, j] and s[i, j] > max_a:
                max_a = s[i, j]
            if p[i, j]:
                n_pos += 1
                if s[i, j] > max_p:
                    max_p = s[i, j]
        if n_pos == 0:
            continue
        # one exp per entry under a shared shift; positives far below the
        # shared maximum fall back to their own shift
        m = max_a if max_a > max_p else max_p
        sum_a = 0.0
        sum_p = 0.0
        for j in range(n):
            if a[i, j] or p[i, j]:
                e[j] = exp(s[i, j] - m)
                if a[i, j]:
                    sum_a += e[j]
                if p[i, j]:
                    sum_p += e[j]
        shift_p = m
        if sum_p < 1e-200:
            shift_p = max_p
            sum_p = 0.0
            for j in range(n):
                if p[i, j]:
                    sum_p += exp(s[i, j] - max_p)
        total += (m + log(sum_a)) - (shift_p + log(sum_p)) + log(<double>n_pos)
        n_valid += 1
        for j in range(n):
            if a[i, j]:
                g[i, j] += e[j] / sum_a
            if p[i, j]:
                if shift_p == m:
                    g[i, j] -= e[j] / sum_p
                else:
                    g[i, j] -= exp(s[i, j] - shift_p) / sum_p
    return total, n_valid, grad_arr
