"""Brute-force reference implementations used to cross-check the fast paths.

These deliberately share no code with :mod:`curiousfl.aggregation` or
:mod:`curiousfl.kernels`: distances are plain loops, neighbour sets are
sorted explicitly and DnC uses a full SVD.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def _sq_dist(a, b) -> float:
    return float(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def krum_scores(updates, n_attackers: int) -> list[float]:
    rows = [list(map(float, r)) for r in updates]
    m = len(rows)
    k = m - n_attackers - 2
    scores = []
    for i in range(m):
        dists = sorted(_sq_dist(rows[i], rows[j]) for j in range(m) if j != i)
        scores.append(sum(dists[:k]))
    return scores


def krum(updates, n_attackers: int) -> int:
    """Position of the Krum winner; ties go to the lowest position."""
    scores = krum_scores(updates, n_attackers)
    best = min(scores)
    return scores.index(best)


def multi_krum(updates, n_attackers: int, n_select: int) -> list[int]:
    remaining = list(range(len(updates)))
    chosen = []
    for _ in range(n_select):
        sub = [updates[i] for i in remaining]
        chosen.append(remaining.pop(krum(sub, n_attackers)))
    return sorted(chosen)


def dnc(updates, n_attackers: int, filter_frac: float = 1.0) -> tuple[list[int], np.ndarray]:
    """Selected positions and outlier scores with an exact SVD (no subsampling)."""
    g = np.asarray(updates, dtype=np.float64)
    centered = g - g.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] == 0:
        scores = np.zeros(len(g))
    else:
        scores = (centered @ vt[0]) ** 2  # the square removes the sign ambiguity
    keep = len(g) - int(math.floor(filter_frac * n_attackers))
    order = sorted(range(len(g)), key=lambda i: (scores[i], i))
    return sorted(order[:keep]), scores


def assignment(cost) -> tuple[list[int], float]:
    """Exhaustive minimum-cost assignment of rows to distinct columns."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    best, best_cols = math.inf, None
    for cols in itertools.permutations(range(m), n):
        total = sum(cost[i, c] for i, c in enumerate(cols))
        if total < best:
            best, best_cols = total, list(cols)
    return best_cols, best


def dct_ii(x) -> np.ndarray:
    """Orthonormal DCT-II straight from its defining sum."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    out = np.empty(n)
    for k in range(n):
        s = sum(x[i] * math.cos(math.pi * (i + 0.5) * k / n) for i in range(n))
        out[k] = s * math.sqrt((1.0 if k == 0 else 2.0) / n)
    return out


ORACLES = {
    "krum": krum,
    "multikrum": multi_krum,
    "dnc": dnc,
    "assignment": assignment,
}
