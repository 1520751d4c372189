"""Model registry: kinds, search spaces, a uniform fit/predict wrapper and JSON I/O."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .linear import LinearModel, fit_enr, fit_lasso, fit_mlr, fit_ridge
from .mlp import MLP, MLPParams, fit_mlp
from .preprocess import Standardizer, standardize_fit
from .trees import BoostParams, ForestParams, GradientBoosting, RandomForest, Tree, fit_gbt, fit_rf


class ModelKind(str, enum.Enum):
    MLR = "MLR"
    LASSO = "Lasso"
    RIDGE = "Ridge"
    ENR = "ENR"
    RF = "RF"
    GBT = "GBT"
    MLP = "MLP"

    @classmethod
    def parse(cls, token: str) -> "ModelKind":
        t = token.strip().lower().replace("-", "").replace("_", "")
        aliases = {"ridgereg": cls.RIDGE, "xgboost": cls.GBT, "elasticnet": cls.ENR}
        if t in aliases:
            return aliases[t]
        for k in cls:
            if k.value.lower() == t:
                return k
        raise ValueError(f"unknown model kind {token!r}")


# search-space primitives; each draws one value from an RNG


@dataclass(frozen=True)
class Fixed:
    value: object

    def sample(self, rng):
        return self.value

    def contains(self, v):
        return v == self.value


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def sample(self, rng):
        return float(rng.uniform(self.lo, self.hi))

    def contains(self, v):
        return self.lo <= v <= self.hi


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def sample(self, rng):
        return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))

    def contains(self, v):
        return self.lo * (1 - 1e-12) <= v <= self.hi * (1 + 1e-12)


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int  # inclusive

    def sample(self, rng):
        return int(rng.integers(self.lo, self.hi + 1))

    def contains(self, v):
        return int(v) == v and self.lo <= v <= self.hi


@dataclass(frozen=True)
class Choice:
    options: tuple

    def sample(self, rng):
        return self.options[int(rng.integers(len(self.options)))]

    def contains(self, v):
        return v in self.options


DEFAULT_SPACES = {
    ModelKind.MLR: {},
    ModelKind.RIDGE: {"lam": LogUniform(1e-4, 1e2)},
    ModelKind.LASSO: {"lam": LogUniform(1e-4, 1e2)},
    ModelKind.ENR: {"lam": LogUniform(1e-4, 1e2), "mix": Uniform(0.0, 1.0)},
    ModelKind.RF: {"n_trees": IntRange(100, 500), "max_depth": IntRange(3, 12), "feature_frac": Uniform(0.3, 1.0)},
    ModelKind.GBT: {
        "n_trees": IntRange(50, 500),
        "learning_rate": LogUniform(0.01, 0.3),
        "max_depth": IntRange(2, 6),
        "reg_lambda": Uniform(0.0, 10.0),
        "gamma": Uniform(0.0, 5.0),
    },
    ModelKind.MLP: {
        "hidden_sizes": Choice(((32,), (64, 32), (128, 64))),
        "learning_rate": LogUniform(1e-4, 1e-2),
        "weight_decay": LogUniform(1e-6, 1e-2),
        "epochs": Fixed(500),
    },
}


def sample_params(space: Mapping, rng) -> dict:
    # draw in sorted key order so adding a key never reshuffles the others
    return {k: space[k].sample(rng) for k in sorted(space)}


def _fit_estimator(kind: ModelKind, hp: dict, X, y, seed: int):
    if kind is ModelKind.MLR:
        return fit_mlr(X, y)
    if kind is ModelKind.RIDGE:
        return fit_ridge(X, y, hp["lam"])
    if kind is ModelKind.LASSO:
        return fit_lasso(X, y, hp["lam"])
    if kind is ModelKind.ENR:
        return fit_enr(X, y, hp["lam"], hp["mix"])
    if kind is ModelKind.RF:
        return fit_rf(X, y, ForestParams(seed=seed, **hp))
    if kind is ModelKind.GBT:
        return fit_gbt(X, y, BoostParams(seed=seed, **hp))
    if kind is ModelKind.MLP:
        hp = dict(hp)
        hp["hidden_sizes"] = tuple(hp.get("hidden_sizes", (32,)))
        return fit_mlp(X, y, MLPParams(seed=seed, **hp))
    raise ValueError(kind)


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A standardizer plus estimator over named features.

    Columns are put in sorted-name order before anything is learned, so the
    fit does not depend on the caller's column order.
    """

    kind: ModelKind
    hyperparameters: dict
    feature_names: tuple  # sorted
    standardizer: Standardizer
    estimator: object
    seed: int = 0

    def _columns(self, X, names):
        X = np.asarray(X, dtype=np.float64)
        names = list(names)
        idx = [names.index(n) for n in self.feature_names]
        return X[:, idx]

    def predict(self, X, names) -> np.ndarray:
        Z = self.standardizer.apply(self._columns(X, names))
        if Z.shape[1] == 0:
            return np.full(len(Z), self._constant())
        return self.estimator.predict(Z)

    def _constant(self):
        return float(self.estimator)

    def importance(self) -> dict:
        """Per-feature importance for tree models (gain for GBT); empty otherwise."""
        if isinstance(self.estimator, (GradientBoosting, RandomForest)):
            return dict(zip(self.standardizer.names, self.estimator.importance().tolist()))
        return {}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "hyperparameters": _jsonable(self.hyperparameters),
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "standardizer": self.standardizer.to_dict(),
            "estimator": _estimator_to_dict(self.estimator),
        }

    @classmethod
    def from_dict(cls, d) -> "FittedModel":
        kind = ModelKind(d["kind"])
        return cls(kind, dict(d["hyperparameters"]), tuple(d["feature_names"]),
                   Standardizer.from_dict(d["standardizer"]), _estimator_from_dict(d["estimator"]), d["seed"])


def fit_model(kind: ModelKind, hyperparameters: dict, X, y, names, seed: int = 0) -> FittedModel:
    kind = ModelKind(kind)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    names = list(names)
    order = sorted(range(len(names)), key=lambda j: names[j])
    Xs = X[:, order]
    sorted_names = tuple(names[j] for j in order)
    st = standardize_fit(Xs, sorted_names)
    Z = st.apply(Xs)
    if Z.shape[1] == 0:
        est = float(np.mean(y))  # nothing varies: predict the mean
    else:
        est = _fit_estimator(kind, dict(hyperparameters), Z, y, seed)
    return FittedModel(kind, dict(hyperparameters), sorted_names, st, est, seed)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _estimator_to_dict(est) -> dict:
    if isinstance(est, float):
        return {"type": "constant", "value": est}
    if isinstance(est, LinearModel):
        return {"type": "linear", "coef": est.coef.tolist(), "intercept": est.intercept}
    if isinstance(est, RandomForest):
        return {"type": "forest", "params": _jsonable(asdict(est.params)), "n_features": est.n_features,
                "trees": [t.to_dict() for t in est.trees]}
    if isinstance(est, GradientBoosting):
        return {"type": "boosting", "params": _jsonable(asdict(est.params)), "n_features": est.n_features,
                "base_score": est.base_score, "trees": [t.to_dict() for t in est.trees]}
    if isinstance(est, MLP):
        p = _jsonable(asdict(est.params))
        return {"type": "mlp", "params": p, "weights": [w.tolist() for w in est.weights],
                "biases": [b.tolist() for b in est.biases], "y_mean": est.y_mean, "y_std": est.y_std}
    raise TypeError(f"cannot serialize {type(est).__name__}")


def _estimator_from_dict(d):
    t = d["type"]
    if t == "constant":
        return float(d["value"])
    if t == "linear":
        return LinearModel(np.asarray(d["coef"], float), float(d["intercept"]))
    if t == "forest":
        return RandomForest(ForestParams(**d["params"]), tuple(Tree.from_dict(x) for x in d["trees"]),
                            d["n_features"])
    if t == "boosting":
        return GradientBoosting(BoostParams(**d["params"]), d["base_score"],
                                tuple(Tree.from_dict(x) for x in d["trees"]), d["n_features"])
    if t == "mlp":
        p = dict(d["params"])
        p["hidden_sizes"] = tuple(p["hidden_sizes"])
        return MLP(MLPParams(**p), tuple(np.asarray(w, float) for w in d["weights"]),
                   tuple(np.asarray(b, float) for b in d["biases"]), d["y_mean"], d["y_std"])
    raise ValueError(f"unknown estimator type {t!r}")
