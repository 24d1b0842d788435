"""Classifier family, initialisers and gradients.

Parameters live in a single flat float64 vector; :attr:`ModelSpec.layout`
maps each weight and bias onto a slice of it.  Forward passes accept either
one parameter vector ``(d,)`` with inputs ``(B, d_in)`` or a stack of
parameter vectors ``(G, d)`` with grouped inputs ``(G, B, d_in)``.  The
grouped form makes per-example (``B`` groups of one) and per-client
gradients a single vectorised backward pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError

log = logging.getLogger(__name__)

ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid, "tanh": ad.tanh}
INIT_SCHEMES = ("kaiming_uniform", "lecun_uniform", "orthogonal")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" or "conv"
    fan_in: int
    fan_out: int
    # conv geometry (square images, channel-last layout, no padding)
    side: int = 0
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 0
    stride: int = 1

    @property
    def out_side(self) -> int:
        return (self.side - self.kernel) // self.stride + 1

    @property
    def n_params(self) -> int:
        if self.kind == "conv":
            return self.kernel * self.kernel * self.in_ch * self.out_ch + self.out_ch
        return self.fan_in * self.fan_out + self.fan_out


@dataclass(frozen=True)
class ModelSpec:
    d_in: int
    n_classes: int
    layers: tuple[LayerSpec, ...]
    activation: str = "relu"
    init: str = "kaiming_uniform"
    layout: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {self.init!r}")
        width = self.d_in
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                if layer.side * layer.side * layer.in_ch != width:
                    raise ConfigError(f"layer {i}: conv input {layer.side}^2x{layer.in_ch} != {width}")
                if layer.out_side < 1:
                    raise ConfigError(f"layer {i}: kernel larger than input")
                width = layer.out_side**2 * layer.out_ch
            elif layer.kind == "dense":
                if layer.fan_in != width:
                    raise ConfigError(f"layer {i}: fan_in {layer.fan_in} != previous width {width}")
                width = layer.fan_out
            else:
                raise ConfigError(f"layer {i}: unknown kind {layer.kind!r}")
        if width != self.n_classes:
            raise ConfigError(f"last layer width {width} != class count {self.n_classes}")

        entries = []
        start = 0
        for layer in self.layers:
            if layer.kind == "conv":
                wshape = (layer.kernel * layer.kernel * layer.in_ch, layer.out_ch)
                bshape = (layer.out_ch,)
            else:
                wshape = (layer.fan_out, layer.fan_in)
                bshape = (layer.fan_out,)
            wn = int(np.prod(wshape))
            entries.append((start, wshape, start + wn, bshape))
            start += wn + bshape[0]
        object.__setattr__(self, "layout", tuple(entries))

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        """Per-layer ``(start, length)``; partitions ``[0, d)`` exactly."""
        out = []
        start = 0
        for layer in self.layers:
            out.append((start, layer.n_params))
            start += layer.n_params
        return tuple(out)


def mlp(d_in: int, n_classes: int, hidden=(64,), activation="relu", init="kaiming_uniform") -> ModelSpec:
    widths = [d_in, *hidden, n_classes]
    layers = tuple(LayerSpec("dense", a, b) for a, b in zip(widths[:-1], widths[1:]))
    return ModelSpec(d_in, n_classes, layers, activation, init)


def convnet(side: int, n_classes: int, channels=(4, 8), kernel=3, stride=2, hidden=(32,),
            activation="relu", init="kaiming_uniform") -> ModelSpec:
    """Small conv net: strided convolutions followed by dense layers."""
    d_in = side * side
    layers = []
    in_ch = 1
    for ch in channels:
        out_side = (side - kernel) // stride + 1
        layers.append(LayerSpec("conv", side * side * in_ch, out_side * out_side * ch,
                                side, in_ch, ch, kernel, stride))
        side, in_ch = out_side, ch
    widths = [side * side * in_ch, *hidden, n_classes]
    layers.extend(LayerSpec("dense", a, b) for a, b in zip(widths[:-1], widths[1:]))
    return ModelSpec(d_in, n_classes, tuple(layers), activation, init)


def _im2col_index(layer: LayerSpec) -> np.ndarray:
    k, s, c = layer.kernel, layer.stride, layer.in_ch
    n = layer.out_side
    idx = np.empty((n * n, k * k * c), dtype=np.intp)
    for oi in range(n):
        for oj in range(n):
            cols = [((oi * s + ki) * layer.side + (oj * s + kj)) * c + ch
                    for ki in range(k) for kj in range(k) for ch in range(c)]
            idx[oi * n + oj] = cols
    return idx


# ---------------------------------------------------------------------------
# initialisation


def _orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    tall = rows >= cols
    a = rng.standard_normal((rows, cols) if tall else (cols, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q if tall else q.T


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a parameter vector; see the README for each scheme's law."""
    w = np.zeros(spec.n_params)
    for layer, (ws, wshape, bs, bshape) in zip(spec.layers, spec.layout):
        fan_in = wshape[0] if layer.kind == "conv" else wshape[1]
        scheme = spec.init
        if scheme == "orthogonal" and layer.kind == "conv":
            log.info("orthogonal init is defined for matrices only; conv kernel uses lecun_uniform")
            scheme = "lecun_uniform"
        n = int(np.prod(wshape))
        if scheme == "kaiming_uniform":
            bound = 1.0 / np.sqrt(fan_in)
            w[ws:ws + n] = rng.uniform(-bound, bound, n)
            w[bs:bs + bshape[0]] = rng.uniform(-bound, bound, bshape[0])
        elif scheme == "lecun_uniform":
            bound = np.sqrt(3.0 / fan_in)
            w[ws:ws + n] = rng.uniform(-bound, bound, n)
        else:
            w[ws:ws + n] = _orthogonal(*wshape, rng).ravel()
    return w


# ---------------------------------------------------------------------------
# forward / loss / gradients


_IM2COL_CACHE: dict[LayerSpec, np.ndarray] = {}


def forward_tensor(spec: ModelSpec, w: Tensor, x: Tensor) -> Tensor:
    """Logits for inputs ``x``; shapes as described in the module docstring."""
    grouped = w.ndim == 2
    if x.shape[-1] != spec.d_in:
        raise ContractError(f"input dimension {x.shape[-1]} != d_in {spec.d_in}")
    if grouped and (x.ndim != 3 or x.shape[0] != w.shape[0]):
        raise ContractError(f"grouped parameters {w.shape} need inputs (G, B, d_in), got {x.shape}")
    lead = (w.shape[0],) if grouped else ()
    act = ACTIVATIONS[spec.activation]
    h = x
    last = len(spec.layers) - 1
    for i, (layer, (ws, wshape, bs, bshape)) in enumerate(zip(spec.layers, spec.layout)):
        wsl = slice(ws, bs)
        bsl = slice(bs, bs + bshape[0])
        W = (w[:, wsl] if grouped else w[wsl]).reshape(lead + wshape)
        b = w[:, bsl] if grouped else w[bsl]
        if layer.kind == "conv":
            idx = _IM2COL_CACHE.get(layer)
            if idx is None:
                idx = _IM2COL_CACHE.setdefault(layer, _im2col_index(layer))
            cols = ad.take(h, idx)  # (*lead, B, P, K)
            if grouped:
                W = W.reshape(lead + (1,) + wshape)
                b = b.reshape(lead + (1, 1, bshape[0]))
            h = cols @ W + b
            h = h.reshape(h.shape[:-2] + (h.shape[-2] * h.shape[-1],))
        else:
            if grouped:
                b = b.reshape(lead + (1, bshape[0]))
            h = h @ W.mT + b
        if i != last:
            h = act(h)
    return h


def forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return forward_tensor(spec, Tensor(params), Tensor(np.atleast_2d(x))).value


def predict(spec: ModelSpec, params: np.ndarray, x: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    x = np.atleast_2d(x)
    parts = [np.argmax(forward(spec, params, x[i:i + chunk]), axis=1) for i in range(0, len(x), chunk)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"labels must lie in [0, {n_classes})")
    return np.eye(n_classes)[labels]


def loss(spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Mean softmax cross-entropy."""
    with ad.no_grad():
        logits = forward_tensor(spec, Tensor(params), Tensor(np.atleast_2d(x)))
        return ad.soft_cross_entropy(logits, Tensor(one_hot(y, spec.n_classes))).item()


def batch_grad(spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean batch loss with respect to the parameters."""
    w = Tensor(params, requires_grad=True)
    logits = forward_tensor(spec, w, Tensor(np.atleast_2d(x)))
    (g,) = ad.grad(ad.soft_cross_entropy(logits, Tensor(one_hot(y, spec.n_classes))), [w])
    return g.value


def per_example_grads(spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row ``i`` is the loss gradient at example ``i``; shape ``(B, d)``."""
    x = np.atleast_2d(x)
    n = len(x)
    w = Tensor(np.broadcast_to(params, (n, params.size)), requires_grad=True)
    logits = forward_tensor(spec, w, Tensor(x[:, None, :]))
    targets = Tensor(one_hot(y, spec.n_classes)[:, None, :])
    # each group's loss depends only on its own parameter copy
    total = ad.soft_cross_entropy(logits, targets).sum()
    (g,) = ad.grad(total, [w])
    return g.value


def per_example_grad(spec: ModelSpec, params: np.ndarray, x_i: np.ndarray, y_i: int) -> np.ndarray:
    return per_example_grads(spec, params, np.atleast_2d(x_i), np.array([y_i]))[0]
