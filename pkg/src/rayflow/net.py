"""Small tanh MLP with hand-written backprop, optimisers and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schedule import Schedule

CHECKPOINT_VERSION = 1
TIME_FEATURES = 4


@dataclass
class Net:
    """Weights are stored as (in, out) matrices so ``h @ W + b`` maps a batch."""

    weights: list
    biases: list

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> Net:
        return Net([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


@dataclass
class Grads:
    weights: list
    biases: list

    def scale(self, a: float) -> Grads:
        return Grads([a * w for w in self.weights], [a * b for b in self.biases])

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def init_net(dims, rng, out_scale: float = 1.0) -> Net:
    """Glorot-uniform weights, zero biases; ``out_scale`` shrinks the last layer."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"bad layer dims {dims}")
    ws, bs = [], []
    for i, (m, n) in enumerate(zip(dims[:-1], dims[1:])):
        lim = np.sqrt(6.0 / (m + n))
        w = rng.uniform(-lim, lim, size=(m, n))
        if i == len(dims) - 2:
            w = w * out_scale
        ws.append(w)
        bs.append(np.zeros(n))
    return Net(ws, bs)


def _check_input(net: Net, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.dims[0]:
        raise ValueError(f"input dim {x.shape[1]} does not match first layer {net.dims[0]}")
    return x, single


def _forward_cache(net: Net, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def forward(net: Net, x) -> np.ndarray:
    x, single = _check_input(net, x)
    out = _forward_cache(net, x)[-1]
    return out[0] if single else out


def backward(net: Net, x, loss_grad) -> Grads:
    """Parameter gradients of ``sum(loss_grad * forward(net, x))``."""
    x, single = _check_input(net, x)
    g = np.asarray(loss_grad, dtype=float)
    if single:
        g = g[None, :]
    if g.shape != (x.shape[0], net.dims[-1]):
        raise ValueError(f"loss_grad shape {g.shape} does not match output {(x.shape[0], net.dims[-1])}")
    acts = _forward_cache(net, x)
    gw, gb = [None] * len(net.weights), [None] * len(net.weights)
    delta = g
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (1.0 - acts[i] ** 2)
    return Grads(gw, gb)


def sgd_step(net: Net, grads: Grads, lr: float) -> Net:
    if lr < 0:
        raise ValueError("lr must be non-negative")
    return Net([w - lr * g for w, g in zip(net.weights, grads.weights)],
               [b - lr * g for b, g in zip(net.biases, grads.biases)])


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam with bias-corrected moments."""

    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-4
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: Net, grads: Grads) -> Net:
        params, gs = net.params(), grads.params()
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        new = []
        for i, (p, g) in enumerate(zip(params, gs)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            upd = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            new.append(p - self.lr * (upd + self.weight_decay * p))
        return Net(new[0::2], new[1::2])


def save_net(net: Net, path, meta: dict | None = None) -> None:
    arrays = {f"w{i}": w for i, w in enumerate(net.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(net.biases)})
    header = {"format_version": CHECKPOINT_VERSION, "dims": net.dims, "meta": meta or {}}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_net(path) -> tuple[Net, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        n = len(header["dims"]) - 1
        net = Net([z[f"w{i}"].copy() for i in range(n)], [z[f"b{i}"].copy() for i in range(n)])
    return net, header["meta"]


def time_features(t, sched: Schedule) -> np.ndarray:
    """[t/T, sin 2pi t/T, cos 2pi t/T, sqrt(abar_t)] for scalar or array ``t``."""
    t = np.asarray(t, dtype=float)
    u = t / sched.T
    feats = [u, np.sin(2 * np.pi * u), np.cos(2 * np.pi * u), np.sqrt(sched.abar_continuous(t))]
    return np.stack(feats, axis=-1)


def _time_block(t, n: int, sched: Schedule) -> np.ndarray:
    f = time_features(t, sched)
    return np.broadcast_to(f, (n, TIME_FEATURES)) if f.ndim == 1 else f


class NetDenoiser:
    """Student eps-predictor: input concat(x_t, time features), output in data space."""

    def __init__(self, net: Net, sched: Schedule):
        self.net, self.sched = net, sched

    def inputs(self, x, t) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.concatenate([x, _time_block(t, x.shape[0], self.sched)], axis=1)

    def __call__(self, x, t):
        out = forward(self.net, self.inputs(x, t))
        return out[0] if np.ndim(x) == 1 else out


def denoiser_dims(dim: int, hidden=(64, 64)) -> list[int]:
    return [dim + TIME_FEATURES, *hidden, dim]


def sampler_dims(dim: int, hidden=(64, 64)) -> list[int]:
    return [2 * dim + TIME_FEATURES, *hidden, 1]


def sampler_inputs(x0, eps_mu, t, sched: Schedule) -> np.ndarray:
    """Rows concat(x0, eps_mu, time features(t)) for every ``t`` in the 1-d array ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (t.size, np.shape(x0)[-1]))
    eps_mu = np.broadcast_to(np.asarray(eps_mu, dtype=float), x0.shape)
    return np.concatenate([x0, eps_mu, time_features(t, sched)], axis=1)
