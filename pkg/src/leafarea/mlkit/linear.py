"""Least squares, ridge, lasso and elastic net.

All penalized fitters minimise

    1/2 ||y - X b - b0||^2 + lam * mix * ||b||_1 + lam * (1 - mix) / 2 * ||b||^2

with an unpenalized intercept, so ridge is the mix = 0 case and lasso mix = 1.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LinearModel:
    coef: np.ndarray
    intercept: float
    n_iter: int = 0
    objective_trace: tuple = ()

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept


def _center(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 1:
        raise ValueError(f"bad shapes X {X.shape}, y {y.shape}")
    xm = X.mean(axis=0)
    ym = float(y.mean())
    return X - xm, y - ym, xm, ym


def fit_mlr(X, y) -> LinearModel:
    """Ordinary least squares; minimum-norm solution when rank deficient."""
    Xc, yc, xm, ym = _center(X, y)
    coef, _, rank, _ = np.linalg.lstsq(Xc, yc, rcond=None)
    if rank < Xc.shape[1]:
        warnings.warn(f"design matrix has rank {rank} < {Xc.shape[1]}; using the minimum-norm solution",
                      stacklevel=2)
    return LinearModel(coef, ym - float(xm @ coef))


def fit_ridge(X, y, lam: float) -> LinearModel:
    """Closed form (X'X + lam I)^-1 X'y on centred data."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    Xc, yc, xm, ym = _center(X, y)
    A = Xc.T @ Xc + lam * np.eye(Xc.shape[1])
    try:
        coef = np.linalg.solve(A, Xc.T @ yc)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(A, Xc.T @ yc, rcond=None)[0]
    return LinearModel(coef, ym - float(xm @ coef))


@njit(cache=True)
def _cd(Q, c, yy, l1, l2, tol, max_iter, trace):
    """Cyclic coordinate descent on the Gram form; returns (coef, cycles)."""
    p = Q.shape[0]
    b = np.zeros(p)
    for it in range(max_iter):
        delta = 0.0
        for j in range(p):
            rho = c[j]
            for k in range(p):
                if k != j:
                    rho -= Q[j, k] * b[k]
            if rho > l1:
                new = (rho - l1) / (Q[j, j] + l2)
            elif rho < -l1:
                new = (rho + l1) / (Q[j, j] + l2)
            else:
                new = 0.0
            if Q[j, j] + l2 == 0.0:
                new = 0.0
            d = abs(new - b[j])
            if d > delta:
                delta = d
            b[j] = new
        # objective after the cycle
        quad = 0.0
        for j in range(p):
            s = 0.0
            for k in range(p):
                s += Q[j, k] * b[k]
            quad += b[j] * (s - 2.0 * c[j])
        pen = 0.0
        for j in range(p):
            pen += l1 * abs(b[j]) + 0.5 * l2 * b[j] * b[j]
        trace[it] = 0.5 * (yy + quad) + pen
        if delta < tol:
            return b, it + 1
    return b, max_iter


def fit_enr(X, y, lam: float, mix: float, tol: float = 1e-8, max_iter: int = 100_000) -> LinearModel:
    """Elastic net by cyclic coordinate descent with soft-thresholding.

    Stops when the largest coefficient change in a full cycle is below ``tol``.
    """
    if lam < 0 or not 0.0 <= mix <= 1.0:
        raise ValueError(f"need lam >= 0 and 0 <= mix <= 1, got lam={lam}, mix={mix}")
    Xc, yc, xm, ym = _center(X, y)
    Q = np.ascontiguousarray(Xc.T @ Xc)
    c = Xc.T @ yc
    trace = np.empty(max_iter)
    coef, n_iter = _cd(Q, c, float(yc @ yc), lam * mix, lam * (1.0 - mix), tol, max_iter, trace)
    if n_iter >= max_iter:
        warnings.warn(f"coordinate descent hit {max_iter} cycles without converging", ConvergenceWarning,
                      stacklevel=2)
    return LinearModel(coef, ym - float(xm @ coef), n_iter, tuple(trace[:n_iter]))


def fit_lasso(X, y, lam: float, **kw) -> LinearModel:
    return fit_enr(X, y, lam, 1.0, **kw)
