"""Client-side local DP: per-example clipping, Gaussian noise, nominal epsilon."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

NOMINAL_NOTE = "nominal (moments-heuristic calibration, not a tight accountant)"


@dataclass(frozen=True)
class DpConfig:
    enabled: bool = False
    clip: float = 4.0
    sigma: float = 0.0
    delta: float = 1e-5
    c: float = 1.0

    def __post_init__(self):
        if self.enabled and self.clip <= 0:
            raise ConfigError("dp.clip must be positive")
        if self.sigma < 0:
            raise ConfigError("dp.sigma must be non-negative")
        if not 0 < self.delta < 1:
            raise ConfigError("dp.delta must lie in (0, 1)")
        if self.c <= 0:
            raise ConfigError("dp.c must be positive")


def _norm(v: np.ndarray) -> float:
    # one summation path for every norm in this module keeps clip idempotent
    return math.sqrt(float(np.dot(v, v)))


def clip(g: np.ndarray, bound: float) -> np.ndarray:
    """Scale ``g`` down to norm ``bound`` if it is longer; never scale up."""
    if bound <= 0:
        raise ConfigError("clip bound must be positive")
    return clip_rows(np.asarray(g, dtype=np.float64)[None, :], bound)[0]


def clip_rows(grads: np.ndarray, bound: float) -> np.ndarray:
    if bound <= 0:
        raise ConfigError("clip bound must be positive")
    grads = np.asarray(grads, dtype=np.float64)
    out = grads.copy()
    for i, g in enumerate(grads):
        norm = _norm(g)
        if norm <= bound:
            continue
        row = g * (bound / norm)
        # rounding can leave the norm an ulp above the bound, which would make
        # a second clip rescale again; shrink until it is inside
        while _norm(row) > bound:
            row *= 1.0 - 2.0 ** -52
        out[i] = row
    return out


def privatize_batch(grads: np.ndarray, batch_size: int, bound: float, sigma: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Clipped mean of per-example gradients plus N(0, (C/B)^2 sigma^2 I) noise."""
    grads = np.atleast_2d(grads)
    if len(grads) != batch_size:
        raise ConfigError(f"expected {batch_size} per-example gradients, got {len(grads)}")
    clipped = clip_rows(grads, bound)
    out = clipped[0].copy()
    for row in clipped[1:]:
        out += row
    out /= batch_size
    if sigma > 0:
        out += rng.normal(0.0, bound / batch_size * sigma, size=out.shape)
    return out


def calibrate_sigma(q: float, steps: int, delta: float, epsilon: float, c: float = 1.0) -> float:
    """Noise multiplier ``c q sqrt(steps ln(1/delta)) / epsilon``."""
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if not 0 < q <= 1:
        raise ConfigError("sampling rate must lie in (0, 1]")
    return c * q * math.sqrt(steps * math.log(1.0 / delta)) / epsilon


def report_epsilon(sigma: float, q: float, steps: int, delta: float, c: float = 1.0) -> float:
    """Inverse of :func:`calibrate_sigma`; ``inf`` when no noise is added.

    The value is nominal and is labelled with :data:`NOMINAL_NOTE` wherever
    it is reported.
    """
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if sigma <= 0:
        return math.inf
    return c * q * math.sqrt(steps * math.log(1.0 / delta)) / sigma
