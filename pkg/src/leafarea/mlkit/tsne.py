"""Exact t-SNE (O(n^2) affinities and gradients)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 30.0
    iters: int = 1000
    learning_rate: float = 200.0
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    entropy_tol: float = 1e-5
    seed: int = 0


@dataclass(frozen=True, eq=False)
class TsneResult:
    embedding: np.ndarray
    kl_trace: np.ndarray  # KL(P || Q) with the true P after every iteration
    perplexity: float


def _sq_dists(X):
    s = np.sum(X * X, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * X @ X.T
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_affinities(D, perplexity, tol=1e-5, max_steps=200):
    """Row-wise Gaussian affinities whose entropy matches log(perplexity)."""
    n = len(D)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_steps):
            w = np.exp(-(d - d.min()) * beta)
            sw = w.sum()
            H = np.log(sw) + beta * float(np.sum((d - d.min()) * w)) / sw
            diff = H - target
            if abs(diff) < tol:
                break
            if diff > 0:  # too flat, sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = w / sw
    return P


def _kl(P, Q):
    nz = P > 0
    return float(np.sum(P[nz] * np.log(P[nz] / np.maximum(Q[nz], 1e-300))))


def tsne(X, params: TsneParams = TsneParams()) -> TsneResult:
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n < 5:
        raise ValueError(f"t-SNE needs at least 5 samples, got {n}")
    perp = params.perplexity
    limit = (n - 1) / 3.0
    if perp >= limit:
        perp = 0.99 * limit
        log.info("perplexity clamped to %.3g for n=%d", perp, n)
    Pc = conditional_affinities(_sq_dists(X), perp, params.entropy_tol)
    P = (Pc + Pc.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)

    rng = np.random.default_rng(params.seed)
    Y = rng.normal(0.0, 1e-4, (n, 2))
    vel = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = np.empty(params.iters)
    for it in range(params.iters):
        exag = params.exaggeration if it < params.exaggeration_iters else 1.0
        mom = params.momentum_start if it < params.exaggeration_iters else params.momentum_final
        num = 1.0 / (1.0 + _sq_dists(Y))
        np.fill_diagonal(num, 0.0)
        Q = num / num.sum()
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        # per-coordinate adaptive gains
        same = np.sign(grad) == np.sign(vel)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        vel = mom * vel - params.learning_rate * gains * grad
        Y = Y + vel
        Y = Y - Y.mean(axis=0)
        num = 1.0 / (1.0 + _sq_dists(Y))
        np.fill_diagonal(num, 0.0)
        trace[it] = _kl(P, num / num.sum())
    return TsneResult(Y, trace, perp)
