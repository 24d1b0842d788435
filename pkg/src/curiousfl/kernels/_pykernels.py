"""Pure-Python implementations of the loop-heavy kernels.

Behaviour is identical to the compiled ``_ckernels`` module.
"""

import math

import numpy as np


def hungarian(cost):
    """Minimum-cost assignment for an ``n x m`` matrix with ``n <= m``.

    Shortest augmenting path with row/column potentials, O(n^2 m).
    Returns the column assigned to each row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    c = cost.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row (1-based) matched to column j
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = c[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


def krum_scores(dist2, n_neighbors):
    """Sum of each row's ``n_neighbors`` smallest off-diagonal entries."""
    d = np.asarray(dist2, dtype=np.float64)
    n = d.shape[0]
    scores = np.empty(n)
    for i in range(n):
        others = sorted(d[i, j] for j in range(n) if j != i)
        scores[i] = sum(others[:n_neighbors])
    return scores


def single_linkage(dist, threshold):
    """Cluster labels after cutting the single-linkage tree at ``threshold``.

    Points closer than or equal to ``threshold`` are chained together.  Labels
    are numbered in order of each cluster's lowest member.
    """
    d = np.asarray(dist, dtype=np.float64)
    n = d.shape[0]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if d[i, j] <= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    labels = np.empty(n, dtype=np.int64)
    names = {}
    for i in range(n):
        r = find(i)
        if r not in names:
            names[r] = len(names)
        labels[i] = names[r]
    return labels
