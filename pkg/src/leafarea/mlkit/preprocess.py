from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-column mean and population std learned from training data.

    Zero-variance columns are dropped; ``names`` lists the retained ones.
    """

    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray
    names: tuple
    dropped: tuple = ()

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != len(self.keep):
            raise ValueError(f"expected {len(self.keep)} columns, got {X.shape[1]}")
        return (X[:, self.keep] - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "keep": self.keep.tolist(),
                "names": list(self.names), "dropped": list(self.dropped)}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["keep"], bool),
                   tuple(d["names"]), tuple(d["dropped"]))


def standardize_fit(X, names=None) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("standardizer needs a non-empty 2-D training matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains NaN or Inf")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    dropped = tuple(n for n, k in zip(names, keep) if not k)
    if dropped:
        log.warning("dropping zero-variance columns: %s", ", ".join(dropped))
    kept = tuple(n for n, k in zip(names, keep) if k)
    return Standardizer(mean[keep], std[keep], keep, kept, dropped)


def standardize_apply(s: Standardizer, X) -> np.ndarray:
    return s.apply(X)
