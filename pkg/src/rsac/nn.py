"""Small tanh MLPs with a hand-written backward pass, Adam and Polyak averaging.

Weights are stored as ``[fan_in, fan_out]`` so a batch ``x`` of shape
``[B, fan_in]`` maps to ``x @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    pass


class StaleCacheError(RuntimeError):
    pass


class Mlp:
    """Parameters live in one flat vector; ``weights``/``biases`` are views into it."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        weights = [np.asarray(w, dtype=float) for w in weights]
        biases = [np.asarray(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} fan-in {w.shape[0]} != previous fan-out "
                                 f"{weights[i - 1].shape[1]}")
        self.flat = np.concatenate([a.ravel() for pair in zip(weights, biases) for a in pair])
        self.weights, self.biases = [], []
        offset = 0
        for w, b in zip(weights, biases):
            self.weights.append(self.flat[offset:offset + w.size].reshape(w.shape))
            offset += w.size
            self.biases.append(self.flat[offset:offset + b.size])
            offset += b.size
        self.version = 0

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "Mlp":
        """Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(ws, bs)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def param_names(self, prefix: str = "net") -> list[str]:
        names = []
        for i in range(len(self.weights)):
            names += [f"{prefix}.layers[{i}].weight", f"{prefix}.layers[{i}].bias"]
        return names

    def copy(self) -> "Mlp":
        return Mlp(self.weights, self.biases)

    def touch(self):
        self.version += 1

    def __call__(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        return h

    def to_dict(self) -> dict:
        return {
            "shapes": [list(w.shape) for w in self.weights],
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        ws = [np.array(data, dtype=float).reshape(shape) for shape, data in zip(d["shapes"], d["weights"])]
        return cls(ws, [np.array(b, dtype=float) for b in d["biases"]])


@dataclass
class Cache:
    net: Mlp
    version: int
    activations: list


def forward(net: Mlp, x):
    """Batched forward pass. Returns (output, cache) for ``backward``."""
    h = np.asarray(x, dtype=float)
    if h.ndim == 1:
        h = h[None, :]
    if h.shape[-1] != net.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[-1]} != network fan-in {net.weights[0].shape[0]}")
    acts = [h]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return h, Cache(net, net.version, acts)


def backward(cache: Cache, grad_out):
    """Reverse-mode gradients. Returns (param grads in ``net.params`` order, input grad)."""
    net = cache.net
    if net.version != cache.version:
        raise StaleCacheError("parameters changed since the forward pass that produced this cache")
    g = np.asarray(grad_out, dtype=float)
    acts = cache.activations
    if g.shape != acts[-1].shape:
        raise ValueError(f"output grad shape {g.shape} != output shape {acts[-1].shape}")
    n = len(net.weights)
    grads = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads, g


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float, **kw) -> "Adam":
        """Moments are kept as single flat vectors matching ``net.flat``."""
        return cls(lr, m=[np.zeros_like(net.flat)], v=[np.zeros_like(net.flat)], **kw)

    def to_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
                "m": [a.ravel().tolist() for a in self.m], "v": [a.ravel().tolist() for a in self.v],
                "shapes": [list(a.shape) for a in self.m]}

    @classmethod
    def from_dict(cls, d: dict) -> "Adam":
        m = [np.array(a, dtype=float).reshape(s) for a, s in zip(d["m"], d["shapes"])]
        v = [np.array(a, dtype=float).reshape(s) for a, s in zip(d["v"], d["shapes"])]
        return cls(d["lr"], d["beta1"], d["beta2"], d["eps"], d["t"], m, v)


def adam_step(opt: Adam, net: Mlp, grads, name: str = "net") -> Mlp:
    """In-place bias-corrected Adam update of ``net``'s parameters."""
    params = net.params
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    g = np.concatenate([np.ravel(x) for x in grads])
    if g.size != net.flat.size:
        raise ValueError(f"gradient size {g.size} != parameter count {net.flat.size}")
    if not np.isfinite(g).all():
        for pname, gi in zip(net.param_names(name), grads):
            if not np.isfinite(gi).all():
                raise TrainingError(f"non-finite gradient in {pname}")
    if not opt.m:
        opt.m, opt.v = [np.zeros_like(net.flat)], [np.zeros_like(net.flat)]
    m, v = opt.m[0], opt.v[0]
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    m *= opt.beta1
    m += (1.0 - opt.beta1) * g
    v *= opt.beta2
    v += (1.0 - opt.beta2) * (g * g)
    net.flat -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    net.touch()
    return net


def polyak_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.sizes != online.sizes:
        raise ValueError(f"shape mismatch: {target.sizes} vs {online.sizes}")
    target.flat *= 1.0 - tau
    target.flat += tau * online.flat
    target.touch()
    return target


def finite_difference(loss_fn, arrays, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``loss_fn()`` w.r.t. each array, perturbed in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b) -> float:
    """||a - b|| / max(||a||, ||b||) over all arrays jointly (0 when both vanish)."""
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_mlp_gradients(sizes, rng: np.random.Generator, batch: int = 4, h: float = 1e-5) -> float:
    """Relative error of ``backward`` against finite differences for a random net and loss."""
    net = Mlp.init(sizes, rng)
    x = rng.standard_normal((batch, sizes[0]))
    w = rng.standard_normal((batch, sizes[-1]))

    def loss():
        return float(np.sum(w * net(x)))

    _, cache = forward(net, x)
    grads, gx = backward(cache, w)
    fd = finite_difference(loss, net.params, h)
    fd_x = finite_difference(lambda: float(np.sum(w * net(x))), [x], h)
    return max(relative_error(grads, fd), relative_error(gx, fd_x[0]))
