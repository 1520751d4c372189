"""Fully connected ReLU network trained by full-batch momentum gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import LeafAreaError


class DivergenceError(LeafAreaError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class MLPParams:
    hidden_sizes: tuple = (32,)
    learning_rate: float = 1e-3
    epochs: int = 500
    weight_decay: float = 0.0
    momentum: float = 0.9
    seed: int = 0


def init_weights(sizes, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        Ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        bs.append(rng.uniform(-lim, lim, fan_out))
    return Ws, bs


def forward(Ws, bs, X):
    a = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        a = np.maximum(a @ W + b, 0.0)
    return (a @ Ws[-1] + bs[-1])[:, 0]


def loss_and_grad(Ws, bs, X, y, weight_decay=0.0):
    """Half mean squared error plus (wd/2)·||W||², and its exact gradient."""
    acts = [X]
    pre = []
    a = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    out = (a @ Ws[-1] + bs[-1])[:, 0]
    n = len(y)
    r = out - y
    loss = 0.5 * float(np.mean(r * r)) + 0.5 * weight_decay * sum(float(np.sum(W * W)) for W in Ws)
    delta = (r / n)[:, None]
    gW = [None] * len(Ws)
    gb = [None] * len(bs)
    for i in range(len(Ws) - 1, -1, -1):
        gW[i] = acts[i].T @ delta + weight_decay * Ws[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ Ws[i].T) * (pre[i - 1] > 0)
    return loss, gW, gb


@dataclass(frozen=True, eq=False)
class MLP:
    params: MLPParams
    weights: tuple
    biases: tuple
    y_mean: float
    y_std: float
    loss_trace: tuple = ()

    def predict(self, X) -> np.ndarray:
        return forward(self.weights, self.biases, np.asarray(X, dtype=np.float64)) * self.y_std + self.y_mean


def fit_mlp(X, y, params: MLPParams = MLPParams()) -> MLP:
    """Train on standardized X; the target is standardized internally."""
    from .trees import canonical_rows

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    order = canonical_rows(X, y)
    X, y = X[order], y[order]
    ym = float(y.mean())
    ys = float(y.std()) or 1.0
    t = (y - ym) / ys
    sizes = [X.shape[1], *params.hidden_sizes, 1]
    Ws, bs = init_weights(sizes, params.seed)
    vW = [np.zeros_like(W) for W in Ws]
    vb = [np.zeros_like(b) for b in bs]
    trace = []
    for epoch in range(params.epochs):
        loss, gW, gb = loss_and_grad(Ws, bs, X, t, params.weight_decay)
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        trace.append(loss)
        for i in range(len(Ws)):
            vW[i] = params.momentum * vW[i] - params.learning_rate * gW[i]
            vb[i] = params.momentum * vb[i] - params.learning_rate * gb[i]
            Ws[i] = Ws[i] + vW[i]
            bs[i] = bs[i] + vb[i]
    if params.epochs and not all(np.all(np.isfinite(W)) for W in Ws):
        raise DivergenceError(params.epochs)
    return MLP(params, tuple(Ws), tuple(bs), ym, ys, tuple(trace))
