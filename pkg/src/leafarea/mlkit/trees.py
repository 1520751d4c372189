"""Random forest and second-order gradient boosting on one tree builder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._tree_kernel import build_tree, predict_tree

_NO_LIMIT = 1 << 30


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def importance(self, n_features: int) -> np.ndarray:
        split = self.feature >= 0
        return np.bincount(self.feature[split], weights=self.gain[split], minlength=n_features)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "gain")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        ints = ("feature", "left", "right")
        return cls(**{k: np.asarray(v, dtype=np.int64 if k in ints else np.float64) for k, v in d.items()})


def grow(X, g, h, rows=None, max_depth=None, min_leaf=1, lam=0.0, gamma=0.0, n_try=None, seed=0) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, p = X.shape
    rows = np.arange(n, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    depth = _NO_LIMIT if max_depth is None else int(max_depth)
    n_try = p if n_try is None else int(min(max(n_try, 1), p))
    parts = build_tree(
        X, np.asarray(g, dtype=np.float64), np.asarray(h, dtype=np.float64), rows,
        depth, int(min_leaf), float(lam), float(gamma), n_try, int(seed) % (2 ** 32),
    )
    return Tree(*parts)


def canonical_rows(X, y) -> np.ndarray:
    """Row order sorted by (features..., target): fitting on it makes the
    result independent of how the caller ordered the training rows."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    feature_frac: float = 1.0
    min_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0


@dataclass(frozen=True, eq=False)
class RandomForest:
    params: ForestParams
    trees: tuple
    n_features: int

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def importance(self) -> np.ndarray:
        """Mean impurity decrease per feature."""
        imp = np.zeros(self.n_features)
        for t in self.trees:
            imp += t.importance(self.n_features)
        return imp / max(len(self.trees), 1)


def fit_rf(X, y, params: ForestParams = ForestParams()) -> RandomForest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise ValueError("random forest needs at least 2 samples")
    order = canonical_rows(X, y)
    X, y = np.ascontiguousarray(X[order]), y[order]
    n, p = X.shape
    n_try = max(1, int(round(params.feature_frac * p)))
    rng = np.random.default_rng(params.seed)
    g, h = -y, np.ones(n)
    trees = []
    for _ in range(params.n_trees):
        rows = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
        tseed = int(rng.integers(2 ** 32))
        trees.append(grow(X, g, h, rows, params.max_depth, params.min_leaf, 0.0, 0.0, n_try, tseed))
    return RandomForest(params, tuple(trees), p)


@dataclass(frozen=True)
class BoostParams:
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_leaf: int = 1
    seed: int = 0


@dataclass(frozen=True, eq=False)
class GradientBoosting:
    params: BoostParams
    base_score: float
    trees: tuple
    n_features: int
    train_loss: tuple = ()

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.full(len(X), self.base_score)
        for t in self.trees:
            out += self.params.learning_rate * t.predict(X)
        return out

    def importance(self) -> np.ndarray:
        """Total split gain per feature, normalized to sum 1 (zeros if no split)."""
        imp = np.zeros(self.n_features)
        for t in self.trees:
            imp += t.importance(self.n_features)
        s = imp.sum()
        return imp / s if s > 0 else imp


def fit_gbt(X, y, params: BoostParams = BoostParams()) -> GradientBoosting:
    """Boosting for squared loss, g = prediction - y and h = 1 per row."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise ValueError("gradient boosting needs at least 2 samples")
    order = canonical_rows(X, y)
    X, y = np.ascontiguousarray(X[order]), y[order]
    n, p = X.shape
    base = float(np.mean(y))
    pred = np.full(n, base)
    h = np.ones(n)
    rng = np.random.default_rng(params.seed)
    trees, losses = [], [0.5 * float(np.mean((pred - y) ** 2))]
    for _ in range(params.n_trees):
        t = grow(X, pred - y, h, None, params.max_depth, params.min_leaf,
                 params.reg_lambda, params.gamma, p, int(rng.integers(2 ** 32)))
        pred = pred + params.learning_rate * t.predict(X)
        trees.append(t)
        losses.append(0.5 * float(np.mean((pred - y) ** 2)))
    return GradientBoosting(params, base, tuple(trees), p, tuple(losses))
