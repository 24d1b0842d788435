"""Server-side aggregation: FedAvg and Byzantine-robust rules.

Each rule takes a :class:`ClientUpdateSet` and returns an
:class:`AggregationOutcome` holding the aggregated update and the ids of the
clients it selected.  Rows are always processed in ascending client-id
order, so results do not depend on submission order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.fft import dct

from . import kernels
from .errors import ConfigError, ContractError

log = logging.getLogger(__name__)


@dataclass
class ClientUpdateSet:
    round: int
    ids: list[int]
    updates: np.ndarray  # (M, d), row i belongs to ids[i]
    eta: float = 1.0

    def __post_init__(self):
        self.updates = np.atleast_2d(np.asarray(self.updates, dtype=np.float64))
        self.ids = [int(i) for i in self.ids]
        if len(self.ids) != len(self.updates):
            raise ContractError(f"{len(self.ids)} ids for {len(self.updates)} updates")
        if len(set(self.ids)) != len(self.ids):
            raise ContractError("client ids must be unique")

    def __len__(self):
        return len(self.ids)

    def sorted(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.ids, kind="stable")
        return np.asarray(self.ids)[order], self.updates[order]


@dataclass
class AggregationOutcome:
    update: np.ndarray
    selected: list[int]
    rule: str
    scores: dict[int, float] = field(default_factory=dict)


def _prepare(updates: ClientUpdateSet):
    if len(updates) == 0:
        raise ContractError("cannot aggregate an empty update set")
    return updates.sorted()


def _mean_rows(rows: np.ndarray) -> np.ndarray:
    out = rows[0].copy()
    for r in rows[1:]:
        out += r
    return out / len(rows)


def _outcome(ids, rows, keep, rule, scores=None) -> AggregationOutcome:
    keep = np.sort(np.asarray(keep, dtype=np.intp))
    return AggregationOutcome(
        _mean_rows(rows[keep]),
        [int(ids[i]) for i in keep],
        rule,
        {int(ids[i]): float(s) for i, s in enumerate(scores)} if scores is not None else {},
    )


def fedavg(updates: ClientUpdateSet) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    return _outcome(ids, rows, np.arange(len(ids)), "fedavg")


def coordinate_median(updates: ClientUpdateSet) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    return AggregationOutcome(np.median(rows, axis=0), [int(i) for i in ids], "median")


def trimmed_mean(updates: ClientUpdateSet, beta: int = 1) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    if beta < 0 or 2 * beta >= len(ids):
        raise ConfigError(f"trim count {beta} needs 2*beta < {len(ids)} clients")
    srt = np.sort(rows, axis=0)
    kept = srt[beta:len(ids) - beta]
    return AggregationOutcome(_mean_rows(kept), [int(i) for i in ids], "trimmed_mean")


def pairwise_sq_dists(rows: np.ndarray) -> np.ndarray:
    n = len(rows)
    d2 = np.zeros((n, n))
    for i in range(n):
        diff = rows[i + 1:] - rows[i]
        d2[i, i + 1:] = np.einsum("ij,ij->i", diff, diff)
    return d2 + d2.T


def _krum_pick(rows: np.ndarray, n_attackers: int) -> tuple[int, np.ndarray]:
    n_neighbors = max(len(rows) - n_attackers - 2, 0)
    scores = kernels.krum_scores(pairwise_sq_dists(rows), n_neighbors)
    # argmin returns the first minimum, i.e. the lowest client id
    return int(np.argmin(scores)), scores


def krum(updates: ClientUpdateSet, n_attackers: int = 1) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    if len(ids) < n_attackers + 3:
        raise ConfigError(f"krum needs at least A+3={n_attackers + 3} clients, got {len(ids)}")
    win, scores = _krum_pick(rows, n_attackers)
    return _outcome(ids, rows, [win], "krum", scores)


def multi_krum(updates: ClientUpdateSet, n_attackers: int = 1, n_select: int = 1) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    if len(ids) < n_attackers + 3:
        raise ConfigError(f"multi-krum needs at least A+3={n_attackers + 3} clients, got {len(ids)}")
    if not 1 <= n_select <= len(ids) - n_attackers - 2:
        raise ConfigError(f"multi-krum select count must lie in [1, M-A-2={len(ids) - n_attackers - 2}]")
    remaining = list(range(len(ids)))
    chosen = []
    first_scores = None
    for _ in range(n_select):
        win, scores = _krum_pick(rows[remaining], n_attackers)
        if first_scores is None:
            first_scores = scores
        chosen.append(remaining.pop(win))
    return _outcome(ids, rows, chosen, "multikrum", first_scores)


def top_right_singular_vector(g: np.ndarray, max_iter: int = 100, tol: float = 1e-13):
    """Principal right singular vector of ``g`` by power iteration.

    Iterates on the small Gram matrix ``g g^T``, squaring it at every step so
    the spectral gap is amplified quadratically.  Returns ``(v, converged)``;
    ``v`` is ``None`` for a zero matrix.
    """
    gram = g @ g.T
    scale = np.linalg.norm(gram)
    if scale == 0:
        return None, True
    b = gram / scale
    converged = False
    for _ in range(max_iter):
        nb = b @ b
        nb /= np.linalg.norm(nb)
        if np.linalg.norm(nb - b) < tol:
            b = nb
            converged = True
            break
        b = nb
    u = b[:, np.argmax(np.linalg.norm(b, axis=0))]
    v = g.T @ u
    norm = np.linalg.norm(v)
    if not converged or norm == 0:
        return None, False
    return v / norm, True


def dnc(updates: ClientUpdateSet, n_attackers: int = 1, filter_frac: float = 1.0,
        subsample: int = 1000, rng: np.random.Generator | None = None) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    n, d = rows.shape
    keep_n = n - int(math.floor(filter_frac * n_attackers))
    if keep_n < 1:
        raise ConfigError(f"dnc would keep {keep_n} clients")
    s = min(subsample, d)
    if s < 1:
        raise ConfigError("dnc subsample size must be positive")
    if s < d:
        if rng is None:
            raise ContractError("dnc with s < d needs an rng stream")
        coords = np.sort(rng.choice(d, size=s, replace=False))
        g = rows[:, coords]
    else:
        g = rows
    centered = g - g.mean(axis=0)
    v, ok = top_right_singular_vector(centered)
    if v is None and not ok:
        log.warning("dnc: power iteration did not converge; using the largest-norm row direction")
        r = centered[np.argmax(np.linalg.norm(centered, axis=1))]
        v = r / np.linalg.norm(r)
    scores = np.zeros(n) if v is None else (centered @ v) ** 2
    keep = np.argsort(scores, kind="stable")[:keep_n]
    return _outcome(ids, rows, keep, "dnc", scores)


def _two_means(feats: np.ndarray, iters: int = 10) -> np.ndarray:
    """2-means with farthest-pair initialisation; returns 0/1 labels."""
    n = len(feats)
    best, pair = -1.0, (0, 0)
    for i in range(n):
        for j in range(i + 1, n):
            dist = float(np.sum((feats[i] - feats[j]) ** 2))
            if dist > best:
                best, pair = dist, (i, j)
    centers = feats[list(pair)].copy()
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        d0 = np.sum((feats - centers[0]) ** 2, axis=1)
        d1 = np.sum((feats - centers[1]) ** 2, axis=1)
        labels = (d1 < d0).astype(int)
        for c in (0, 1):
            if np.any(labels == c):
                centers[c] = feats[labels == c].mean(axis=0)
    return labels


def signguard(updates: ClientUpdateSet, rng: np.random.Generator | None = None,
              low: float = 0.1, high: float = 3.0, max_coords: int = 10000) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    n, d = rows.shape
    norms = np.linalg.norm(rows, axis=1)
    med = float(np.median(norms))
    s1 = set(np.flatnonzero((norms >= low * med) & (norms <= high * med)).tolist())
    k = min(d, max_coords)
    if k < d:
        if rng is None:
            raise ContractError("signguard with d > max_coords needs an rng stream")
        cols = np.sort(rng.choice(d, size=k, replace=False))
        sub = rows[:, cols]
    else:
        sub = rows
    feats = np.stack([(sub > 0).mean(axis=1), (sub < 0).mean(axis=1), (sub == 0).mean(axis=1)], axis=1)
    labels = _two_means(feats)
    sizes = [int(np.sum(labels == 0)), int(np.sum(labels == 1))]
    if sizes[0] != sizes[1]:
        big = int(np.argmax(sizes))
    else:
        big = int(labels[0])
    s2 = set(np.flatnonzero(labels == big).tolist())
    keep = sorted(s1 & s2) or sorted(s1)
    if not keep:
        keep = list(range(n))
    return _outcome(ids, rows, keep, "signguard", norms / med if med > 0 else np.zeros(n))


def balance(updates: ClientUpdateSet, reference: np.ndarray, phi: float = 0.4, kappa: float = 1.0,
            round_idx: int = 0, total_rounds: int = 1) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    if phi <= 0:
        raise ConfigError("balance phi must be positive")
    reference = np.asarray(reference, dtype=np.float64)
    dist = np.linalg.norm(rows - reference, axis=1)
    threshold = phi * math.exp(-kappa * round_idx / max(total_rounds, 1)) * np.linalg.norm(reference)
    keep = np.flatnonzero(dist <= threshold)
    if keep.size == 0:
        log.info("balance: no update within %.4g of the reference; keeping the closest", threshold)
        keep = [int(np.argmin(dist))]
    return _outcome(ids, rows, keep, "balance", dist)


def dct_ortho(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the last axis."""
    return dct(np.asarray(x, dtype=np.float64), type=2, norm="ortho", axis=-1)


def cosine_distances(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    dist = 1.0 - sim
    np.fill_diagonal(dist, 0.0)
    return dist


def freqfed(updates: ClientUpdateSet, keep_frac: float = 0.25) -> AggregationOutcome:
    ids, rows = _prepare(updates)
    n, d = rows.shape
    low = dct_ortho(rows)[:, : max(1, math.ceil(d * keep_frac))]
    dist = cosine_distances(low)
    if n == 1:
        return _outcome(ids, rows, [0], "freqfed")
    iu = np.triu_indices(n, 1)
    threshold = float(np.median(dist[iu]))
    labels = kernels.single_linkage(dist, threshold)
    sizes = np.bincount(labels)
    # labels are numbered by lowest member, so argmax breaks ties towards low ids
    big = int(np.argmax(sizes))
    keep = np.flatnonzero(labels == big)
    return _outcome(ids, rows, keep, "freqfed", labels.astype(float))


RULES: dict[str, Callable[..., AggregationOutcome]] = {
    "fedavg": fedavg,
    "median": coordinate_median,
    "trimmed_mean": trimmed_mean,
    "krum": krum,
    "multikrum": multi_krum,
    "dnc": dnc,
    "signguard": signguard,
    "balance": balance,
    "freqfed": freqfed,
}


def aggregate(rule: str, updates: ClientUpdateSet, **params) -> AggregationOutcome:
    try:
        fn = RULES[rule]
    except KeyError:
        raise ConfigError(f"unknown aggregation rule {rule!r}; choose from {sorted(RULES)}") from None
    return fn(updates, **params)
