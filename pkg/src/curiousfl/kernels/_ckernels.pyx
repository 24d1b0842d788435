# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def hungarian(cost):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(m + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.empty(n, dtype=np.int64)
    cdef long long[::1] a = assign
    for j in range(1, m + 1):
        if p[j]:
            a[p[j] - 1] = j - 1
    return assign


def krum_scores(dist2, Py_ssize_t n_neighbors):
    cdef double[:, ::1] d = np.ascontiguousarray(dist2, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0], i, j, k
    scores = np.empty(n)
    cdef double[::1] s = scores
    cdef double[::1] row = np.empty(max(n - 1, 1))
    cdef double acc, x
    cdef Py_ssize_t t
    for i in range(n):
        k = 0
        for j in range(n):
            if j != i:
                # insertion sort; client counts are small
                x = d[i, j]
                t = k
                while t > 0 and row[t - 1] > x:
                    row[t] = row[t - 1]
                    t -= 1
                row[t] = x
                k += 1
        acc = 0.0
        for j in range(min(n_neighbors, k)):
            acc += row[j]
        s[i] = acc
    return scores


cdef Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t a) nogil:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def single_linkage(dist, double threshold):
    cdef double[:, ::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0], i, j, ri, rj
    cdef Py_ssize_t[::1] parent = np.arange(n, dtype=np.intp)
    for i in range(n):
        for j in range(i + 1, n):
            if d[i, j] <= threshold:
                ri = _find(parent, i)
                rj = _find(parent, j)
                if ri != rj:
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    labels = np.empty(n, dtype=np.int64)
    cdef long long[::1] lab = labels
    cdef Py_ssize_t[::1] name = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t next_label = 0, r
    for i in range(n):
        r = _find(parent, i)
        if name[r] < 0:
            name[r] = next_label
            next_label += 1
        lab[i] = name[r]
    return labels
