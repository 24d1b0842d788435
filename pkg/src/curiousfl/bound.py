"""Explicit reconstruction-error bound and empirical estimates of its constants.

The bound is a diagnostic.  Its constants are sampled estimates, and real
images break the equal-norm assumption, so nothing here claims the bound
holds for measured RMSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError


def rho0(L_psi: float, L_g: float, k: int, eta: float | None = None) -> float:
    """Coefficient of the objective-gap term.

    With a learning rate this is ``2 L_psi sqrt(2k/eta)``; without one it uses
    ``eta = 1/L_g``, i.e. ``2 L_psi sqrt(2 L_g k)``.
    """
    if k < 0:
        raise ContractError("round index k must be >= 0")
    if eta is not None:
        if eta <= 0:
            raise ContractError("learning rate must be positive")
        return 2.0 * L_psi * math.sqrt(2.0 * k / eta)
    return 2.0 * L_psi * math.sqrt(2.0 * L_g * k)


def rho1(L_psi: float, C: float, k: int, M: int, B: int, d: int) -> float:
    """Coefficient of the noise term, ``2 sqrt(2d) L_psi C k / (sqrt(M) B)``."""
    if M < 1 or B < 1:
        raise ContractError("client count and batch size must be >= 1")
    if k < 0:
        raise ContractError("round index k must be >= 0")
    return 2.0 * math.sqrt(2.0 * d) * L_psi * C * k / (math.sqrt(M) * B)


@dataclass(frozen=True)
class BoundInputs:
    delta: float  # objective gap
    L_g: float
    L_psi: float
    C: float
    sigma: float
    M: int
    B: int
    d: int
    d_in: int
    upsilon: float  # data norm
    e0: float  # base error
    k: int
    eta: float | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ContractError("round index k must be >= 0")
        for name in ("delta", "sigma", "e0", "upsilon", "C"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        for name in ("L_g", "L_psi"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be > 0")


def theorem_bound(inp: BoundInputs) -> float:
    """``min(e0 + rho0*delta + rho1*sigma, 2*upsilon) / sqrt(d_in)``."""
    if inp.d_in <= 0:
        raise ContractError(f"input dimension must be positive, got {inp.d_in}")
    r0 = rho0(inp.L_psi, inp.L_g, inp.k, inp.eta)
    r1 = rho1(inp.L_psi, inp.C, inp.k, inp.M, inp.B, inp.d)
    # 0 * inf would be nan; a zero coefficient contributes nothing
    t0 = r0 * inp.delta if r0 > 0 else 0.0
    t1 = r1 * inp.sigma if r1 > 0 else 0.0
    return min(inp.e0 + t0 + t1, 2.0 * inp.upsilon) / math.sqrt(inp.d_in)


# ---------------------------------------------------------------------------
# estimates


def estimate_lipschitz(fn: Callable[[np.ndarray], np.ndarray], points: Sequence[np.ndarray],
                       rng: np.random.Generator, n_probes: int = 64, radius: float = 1e-2) -> float:
    """Largest sampled ratio ``|fn(a) - fn(b)| / |a - b|``.

    Each probe picks a base point from ``points`` and compares it with a
    random perturbation of norm ``radius * max(1, |a|)``.
    """
    if n_probes < 2:
        raise ContractError("Lipschitz estimation needs at least 2 probes")
    points = [np.asarray(p, dtype=np.float64) for p in points]
    if not points:
        raise ContractError("no probe points given")
    best = 0.0
    for i in range(n_probes):
        a = points[i % len(points)]
        u = rng.standard_normal(a.shape)
        u *= radius * max(1.0, float(np.linalg.norm(a))) / np.linalg.norm(u)
        b = a + u
        num = float(np.linalg.norm(np.asarray(fn(a)) - np.asarray(fn(b))))
        best = max(best, num / float(np.linalg.norm(u)))
    return best


def objective_gap(f0: float, fk: float) -> float:
    """``sqrt(f(w0) - f(w_k))``, clamped at 0 when the loss went up."""
    return math.sqrt(max(f0 - fk, 0.0))


def base_error(round0_rmse: Sequence[float], d_in: int) -> float:
    """Worst per-example RMSE at round 0, rescaled to an l2 error."""
    if len(round0_rmse) == 0:
        return 0.0
    return float(np.max(round0_rmse)) * math.sqrt(d_in)


def data_norm(images: np.ndarray) -> tuple[float, bool]:
    """Largest example norm and whether the equal-norm assumption fails."""
    norms = np.linalg.norm(np.atleast_2d(images), axis=1)
    if norms.size == 0:
        return 0.0, False
    top = float(norms.max())
    violated = bool(top - float(norms.min()) > 1e-9 * max(top, 1.0))
    return top, violated


@dataclass
class ConstantEstimates:
    L_g: float
    L_psi: float
    delta: float
    e0: float
    upsilon: float
    assumption2_violated: bool
    n_probes: int


def estimate_constants(grad_fn: Callable[[np.ndarray], np.ndarray], params_trace: Sequence[np.ndarray],
                       recon_fn: Callable[[np.ndarray], np.ndarray] | None, observed: np.ndarray | None,
                       losses: Sequence[float], round0_rmse: Sequence[float], images: np.ndarray,
                       n_probes: int, rng: np.random.Generator, radius: float = 1e-2) -> ConstantEstimates:
    """Sampled estimates of every constant the bound needs.

    ``grad_fn`` maps parameters to the training-loss gradient and is probed
    around the recorded ``params_trace``.  ``recon_fn`` maps an observed
    gradient to flattened reconstructed images and is probed around
    ``observed``; without it ``L_psi`` is reported as 1.  ``losses`` holds
    ``f(w0), ..., f(w_k)``.
    """
    if n_probes < 2:
        raise ContractError("constant estimation needs at least 2 probes")
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    L_g = estimate_lipschitz(grad_fn, params_trace, rng, n_probes, radius)
    if recon_fn is not None and observed is not None:
        L_psi = estimate_lipschitz(lambda g: np.ravel(recon_fn(g)), [observed], rng, n_probes, radius)
    else:
        L_psi = 1.0
    delta = objective_gap(losses[0], losses[-1]) if len(losses) else 0.0
    upsilon, violated = data_norm(images)
    return ConstantEstimates(
        L_g=L_g,
        L_psi=L_psi,
        delta=delta,
        e0=base_error(round0_rmse, images.shape[1]),
        upsilon=upsilon,
        assumption2_violated=violated,
        n_probes=n_probes,
    )
