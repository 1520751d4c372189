"""Regression metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if len(y) != len(yhat) or len(y) == 0:
        raise ValueError(f"need equal non-empty lengths, got {len(y)} and {len(yhat)}")
    return y, yhat


def r2(y, yhat) -> float:
    """Coefficient of determination; NaN (with a warning) when y is constant."""
    y, yhat = _pair(y, yhat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        warnings.warn("r2 is undefined for a constant target", RuntimeWarning, stacklevel=2)
        return math.nan
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def bias(y, yhat) -> float:
    """Mean of predicted minus actual."""
    y, yhat = _pair(y, yhat)
    return float(np.mean(yhat - y))


@dataclass(frozen=True)
class EvalMetrics:
    r2: float
    mae: float
    bias: float

    @classmethod
    def compute(cls, y, yhat) -> "EvalMetrics":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return cls(r2(y, yhat), mae(y, yhat), bias(y, yhat))
