"""The maliciously curious client.

It plays two roles at once:

* poisoning -- it transforms its own upload (or its own training batch)
  before submission, never touching anything of its peers;
* reconstruction -- from two consecutive broadcast models it recovers the
  aggregated gradient and optimises dummy images until the gradients they
  induce, passed through a surrogate of the unknown server rule, match it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import ConfigError, ContractError, NumericError
from .model import ModelSpec, forward_tensor, init_params, mlp

log = logging.getLogger(__name__)

POISONS = ("passive", "sign_flip", "gaussian", "backdoor")
SURROGATES = ("mean", "soft_median", "pseudo_krum")


@dataclass(frozen=True)
class AttackConfig:
    poison: str = "passive"
    flip_scale: float = 1.0
    gaussian_sigma: float = 1.0
    backdoor_size: int = 4
    backdoor_value: float = 1.0
    backdoor_label: int = 0
    # reconstruction
    enabled: bool = True
    cadence: int = 1
    start_round: int = 1
    batch_rec: int = 4
    iterations: int = 200
    lr: float = 0.1
    restarts: int = 3
    surrogates: tuple[str, ...] = SURROGATES
    temperature: float = 1.0
    dummy: str = "decoder"  # or "pixel"
    method: str = "proposed"  # or "invertgrad"
    tv_weight: float = 1e-2
    known_own_update: bool = True
    latent_dim: int = 32
    decoder_hidden: int = 128
    decoder_epochs: int = 30
    decoder_lr: float = 3e-3
    max_backtracks: int = 30
    lr_recovery: float = 1.1

    def __post_init__(self):
        if self.poison not in POISONS:
            raise ConfigError(f"attack.poison must be one of {POISONS}")
        if self.flip_scale <= 0:
            raise ConfigError("attack.flip_scale must be positive")
        if self.gaussian_sigma < 0:
            raise ConfigError("attack.gaussian_sigma must be non-negative")
        bad = [s for s in self.surrogates if s not in SURROGATES]
        if bad or not self.surrogates:
            raise ConfigError(f"attack.surrogates must be a non-empty subset of {SURROGATES}")
        if self.temperature <= 0:
            raise ConfigError("attack.temperature must be positive")
        if self.dummy not in ("decoder", "pixel"):
            raise ConfigError("attack.dummy must be 'decoder' or 'pixel'")
        if self.method not in ("proposed", "invertgrad"):
            raise ConfigError("attack.method must be 'proposed' or 'invertgrad'")
        if self.cadence < 1 or self.batch_rec < 1 or self.restarts < 1 or self.iterations < 0:
            raise ConfigError("attack cadence, batch_rec and restarts must be >= 1")


# ---------------------------------------------------------------------------
# observation and poisoning


def observe_global_grad(w_k: np.ndarray, w_next: np.ndarray, eta: float) -> np.ndarray:
    """Aggregated gradient implied by two consecutive broadcasts."""
    if eta <= 0:
        raise ContractError("learning rate must be positive")
    w_k = np.asarray(w_k, dtype=np.float64)
    w_next = np.asarray(w_next, dtype=np.float64)
    if w_k.shape != w_next.shape:
        raise ContractError(f"broadcast shapes differ: {w_k.shape} vs {w_next.shape}")
    return (w_k - w_next) / eta


def poison_sign_flip(g: np.ndarray, scale: float = 1.0) -> np.ndarray:
    if scale <= 0:
        raise ConfigError("sign-flip scale must be positive")
    return -scale * np.asarray(g, dtype=np.float64)


def poison_gaussian(d: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """A pure-noise upload, independent of the honest gradient."""
    if sigma == 0:
        return np.zeros(d)
    return rng.normal(0.0, sigma, size=d)


def backdoor_pattern(d_in: int, size: int = 4, value: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Pixel indices and values of a ``size x size`` square in the bottom-right corner."""
    side = int(round(math.sqrt(d_in)))
    if side * side != d_in or not 1 <= size <= side:
        raise ConfigError(f"cannot place a {size}x{size} pattern on {d_in} pixels")
    rows, cols = np.meshgrid(np.arange(side - size, side), np.arange(side - size, side), indexing="ij")
    idx = (rows * side + cols).ravel()
    return idx, np.full(idx.size, float(value))


def poison_backdoor(x: np.ndarray, y: np.ndarray, pattern: tuple[np.ndarray, np.ndarray],
                    target: int) -> tuple[np.ndarray, np.ndarray]:
    """Stamp the pattern onto every image and relabel the whole batch."""
    idx, vals = pattern
    x = np.array(x, dtype=np.float64, copy=True)
    if idx.size and idx.max() >= x.shape[-1]:
        raise ContractError("pattern index outside the image")
    x[..., idx] = vals
    np.clip(x, 0.0, 1.0, out=x)
    return x, np.full_like(np.asarray(y), target)


# ---------------------------------------------------------------------------
# surrogate aggregators (differentiable; ndarray in -> ndarray out)


def _as_stack(grads):
    if isinstance(grads, Tensor):
        return grads, False
    return Tensor(np.atleast_2d(np.asarray(grads, dtype=np.float64))), True


def surrogate_mean(grads):
    g, raw = _as_stack(grads)
    out = g.sum(axis=0) * (1.0 / g.shape[0])
    return out.value if raw else out


def surrogate_soft_median(grads, temperature: float = 1.0):
    """Coordinate-wise softmax-weighted average around the mean."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    g, raw = _as_stack(grads)
    centre = g.mean(axis=0, keepdims=True)
    weights = ad.softmax(ad.tabs(g - centre) * (-1.0 / temperature), axis=0)
    out = (weights * g).sum(axis=0)
    return out.value if raw else out


def surrogate_pseudo_krum(grads, index: int | None = None, rng: np.random.Generator | None = None):
    """One input picked uniformly at random (or the given ``index``)."""
    g, raw = _as_stack(grads)
    if index is None:
        if rng is None:
            raise ContractError("pseudo-krum needs an index or an rng stream")
        index = int(rng.integers(g.shape[0]))
    out = g[index]
    return out.value if raw else out


# ---------------------------------------------------------------------------
# decoder prior


@dataclass
class Decoder:
    spec: ModelSpec  # latent -> hidden -> d_in, sigmoid applied on top
    params: np.ndarray
    history: list[float] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.spec.d_in

    def decode_tensor(self, z: Tensor) -> Tensor:
        return ad.sigmoid(forward_tensor(self.spec, Tensor(self.params), z))

    def decode(self, z: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.decode_tensor(Tensor(np.atleast_2d(z))).value


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def pretrain_decoder(images: np.ndarray, rng: np.random.Generator, latent_dim: int = 32,
                     hidden: int = 128, epochs: int = 30, lr: float = 3e-3,
                     batch_size: int = 32) -> Decoder:
    """Fit an MLP autoencoder by pixel MSE and keep its decoder half."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if len(images) == 0:
        raise ContractError("the decoder needs at least one local image")
    d_in = images.shape[1]
    enc_spec = mlp(d_in, latent_dim, hidden=(hidden,))
    dec_spec = mlp(latent_dim, d_in, hidden=(hidden,))
    enc = init_params(enc_spec, rng)
    dec = init_params(dec_spec, rng)
    n_enc = enc.size
    theta = np.concatenate([enc, dec])
    opt = Adam(lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for s in range(0, len(images), batch_size):
            xb = Tensor(images[order[s:s + batch_size]])
            th = Tensor(theta, requires_grad=True)
            z = forward_tensor(enc_spec, th[:n_enc], xb)
            recon = ad.sigmoid(forward_tensor(dec_spec, th[n_enc:], z))
            diff = recon - xb
            mse = (diff * diff).mean()
            (g,) = ad.grad(mse, [th])
            theta = opt.step(theta, g.value)
            total += mse.item() * len(xb.value)
        history.append(total / len(images))
    return Decoder(dec_spec, theta[n_enc:].copy(), history)


# ---------------------------------------------------------------------------
# reconstruction


@dataclass
class ReconstructionState:
    images: np.ndarray  # (n_dummies, d_in) in [0, 1]
    label_probs: np.ndarray
    surrogate: str
    restart: int
    loss: float
    loss_trace: list[float]
    latents: np.ndarray
    branch_losses: dict[tuple[str, int], float] = field(default_factory=dict)


class _Problem:
    """Matching objective for one (surrogate, restart) branch."""

    def __init__(self, spec, params, target, n_slots, cfg, decoder, own_update, krum_index):
        self.spec = spec
        self.target = target
        self.cfg = cfg
        self.decoder = decoder
        self.own = None if own_update is None else Tensor(np.asarray(own_update)[None, :])
        self.n_groups = n_slots - (1 if own_update is not None else 0)
        self.krum_index = krum_index
        self.P = np.broadcast_to(params, (self.n_groups, params.size))
        self.n_dummies = self.n_groups * cfg.batch_rec

    def images(self, latent: Tensor) -> Tensor:
        if self.decoder is not None:
            return self.decoder.decode_tensor(latent)
        return ad.sigmoid(latent)

    def aggregate(self, stack: Tensor) -> Tensor:
        kind, cfg = self.kind, self.cfg
        if kind == "mean":
            return surrogate_mean(stack)
        if kind == "soft_median":
            return surrogate_soft_median(stack, cfg.temperature)
        return surrogate_pseudo_krum(stack, index=self.krum_index)

    def evaluate(self, latent_np, labels_np):
        latent = Tensor(latent_np, requires_grad=True)
        labels = Tensor(labels_np, requires_grad=True)
        x = self.images(latent)
        B = self.cfg.batch_rec
        xg = x.reshape((self.n_groups, B, self.spec.d_in))
        lg = labels.reshape((self.n_groups, B, self.spec.n_classes))
        P = Tensor(self.P, requires_grad=True)
        logits = forward_tensor(self.spec, P, xg)
        # each group's loss only touches its own parameter copy
        total = ad.label_logit_cross_entropy(logits, lg).sum()
        (dummy_grads,) = ad.grad(total, [P], create_graph=True)
        stack = dummy_grads if self.own is None else ad.concat([dummy_grads, self.own])
        agg = self.aggregate(stack)
        if self.cfg.method == "invertgrad":
            tgt = Tensor(self.target)
            cos = (agg * tgt).sum() / (ad.sqrt((agg * agg).sum() + 1e-12) * float(np.linalg.norm(self.target) + 1e-12))
            obj = 1.0 - cos + self.cfg.tv_weight * total_variation(x)
        else:
            diff = agg - Tensor(self.target)
            obj = (diff * diff).sum()
        g_lat, g_lab = ad.grad(obj, [latent, labels])
        return obj.item(), g_lat.value, g_lab.value, x.value


def total_variation(x: Tensor) -> Tensor:
    """Mean absolute difference between neighbouring pixels of square images."""
    d_in = x.shape[-1]
    side = int(round(math.sqrt(d_in)))
    img = x.reshape(x.shape[:-1] + (side, side))
    dv = ad.tabs(img[..., 1:, :] - img[..., :-1, :])
    dh = ad.tabs(img[..., :, 1:] - img[..., :, :-1])
    return dv.mean() + dh.mean()


def _optimise(problem: _Problem, latent, labels, cfg: AttackConfig):
    """Adam with step halving whenever the objective goes up."""
    loss, g_lat, g_lab, _ = problem.evaluate(latent, labels)
    trace = [loss]
    x = np.concatenate([latent.ravel(), labels.ravel()])
    g = np.concatenate([g_lat.ravel(), g_lab.ravel()])
    n_lat = latent.size
    opt = Adam(cfg.lr)
    backtracks = 0
    for _ in range(cfg.iterations):
        cand = opt.step(x, g)
        c_loss, c_glat, c_glab, _ = problem.evaluate(cand[:n_lat].reshape(latent.shape),
                                                     cand[n_lat:].reshape(labels.shape))
        if c_loss <= loss:
            x, loss = cand, c_loss
            g = np.concatenate([c_glat.ravel(), c_glab.ravel()])
            trace.append(loss)
            opt.lr = min(cfg.lr, opt.lr * cfg.lr_recovery)
            backtracks = 0
        else:
            # reject: shrink the step and retry from the accepted point
            opt.lr *= 0.5
            backtracks += 1
            if backtracks > cfg.max_backtracks:
                break
    return x[:n_lat].reshape(latent.shape), x[n_lat:].reshape(labels.shape), loss, trace


def reconstruct(target: np.ndarray, spec: ModelSpec, params: np.ndarray, cfg: AttackConfig,
                rng: np.random.Generator, n_clients: int, decoder: Decoder | None = None,
                own_update: np.ndarray | None = None) -> ReconstructionState:
    """Invert an observed aggregated gradient into dummy images.

    Every surrogate in ``cfg.surrogates`` is tried with ``cfg.restarts``
    random starts; the branch with the lowest final objective wins (ties by
    surrogate order, then restart number).  When ``own_update`` is given it
    fills the attacker's own slot, so dummies are only optimised for the
    ``n_clients - 1`` peers.
    """
    target = np.asarray(target, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if target.shape != (spec.n_params,):
        raise ContractError(f"observed gradient has shape {target.shape}, model has {spec.n_params} params")
    if cfg.dummy == "decoder" and decoder is None:
        raise ConfigError("decoder dummies need a pretrained decoder")
    if own_update is not None and n_clients < 2:
        own_update = None
    use_decoder = decoder if cfg.dummy == "decoder" else None
    best = None
    branch_losses = {}
    for qi, kind in enumerate(cfg.surrogates):
        for r in range(cfg.restarts):
            krum_index = int(rng.integers(n_clients)) if kind == "pseudo_krum" else None
            problem = _Problem(spec, params, target, n_clients, cfg, use_decoder, own_update, krum_index)
            problem.kind = kind
            n = problem.n_dummies
            width = use_decoder.latent_dim if use_decoder is not None else spec.d_in
            latent0 = rng.standard_normal((n, width))
            labels0 = rng.standard_normal((n, spec.n_classes))
            try:
                latent, labels, loss, trace = _optimise(problem, latent0, labels0, cfg)
            except NumericError as exc:
                log.warning("reconstruction branch (%s, restart %d) aborted: %s", kind, r, exc)
                continue
            branch_losses[(kind, r)] = loss
            key = (loss, qi, r)
            if best is None or key < best[0]:
                best = (key, kind, r, latent, labels, trace)
    if best is None:
        raise NumericError("every reconstruction restart produced a non-finite objective")
    (loss, _, _), kind, r, latent, labels, trace = best
    with ad.no_grad():
        imgs = (use_decoder.decode(latent) if use_decoder is not None
                else ad.sigmoid(Tensor(latent)).value)
        probs = ad.softmax(Tensor(labels)).value
    return ReconstructionState(np.clip(imgs, 0.0, 1.0), probs, kind, r, loss, trace, latent, branch_losses)


# ---------------------------------------------------------------------------
# evaluation


def match_pairs(recon: np.ndarray, truth: np.ndarray, exact_limit: int = 64) -> list[tuple[int, int]]:
    """Pair reconstructions with ground truth by minimum total squared error."""
    cost = ((recon[:, None, :] - truth[None, :, :]) ** 2).sum(axis=2)
    n, m = cost.shape
    transpose = n > m
    if transpose:
        cost = cost.T
    if min(n, m) <= exact_limit:
        cols = kernels.hungarian(cost)
        pairs = list(enumerate(int(c) for c in cols))
    else:
        pairs = []
        c = cost.copy()
        for _ in range(min(n, m)):
            i, j = np.unravel_index(np.argmin(c), c.shape)
            pairs.append((int(i), int(j)))
            c[i, :] = np.inf
            c[:, j] = np.inf
        pairs.sort()
    if transpose:
        pairs = sorted((j, i) for i, j in pairs)
    return pairs


def rmse_eval(recon: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-pair RMSE after optimal matching, and their mean."""
    recon = np.atleast_2d(np.asarray(recon, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if recon.shape[1] != truth.shape[1]:
        raise ContractError("reconstructions and data differ in input dimension")
    if len(recon) != len(truth):
        log.info("rmse: %d reconstructions vs %d examples; scoring %d matched pairs",
                 len(recon), len(truth), min(len(recon), len(truth)))
    if len(recon) == 0 or len(truth) == 0:
        return np.zeros(0), float("nan")
    pairs = match_pairs(recon, truth)
    d_in = truth.shape[1]
    per = np.array([math.sqrt(float(np.sum((recon[i] - truth[j]) ** 2)) / d_in) for i, j in pairs])
    return per, float(per.mean())
