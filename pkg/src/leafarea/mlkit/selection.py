"""Feature selection: binned mutual information and Boruta."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest, rankdata

from .trees import canonical_rows, grow

log = logging.getLogger(__name__)


def _equal_frequency_bins(v, bins):
    r = rankdata(v, method="min") - 1  # ties share the lowest rank
    return (r * bins // len(v)).astype(np.int64)


def mutual_information(x, y, bins: int = 10) -> float:
    """MI in nats between equal-frequency discretisations of x and y."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2 * bins:
        raise ValueError(f"need at least {2 * bins} samples for {bins} bins, got {len(x)}")
    bx = _equal_frequency_bins(x, bins)
    by = _equal_frequency_bins(y, bins)
    joint = np.zeros((bins, bins))
    np.add.at(joint, (bx, by), 1.0)
    joint /= len(x)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / np.outer(px, py)[nz])))
    return max(mi, 0.0)


class Decision(str, enum.Enum):
    CONFIRMED = "Confirmed"
    TENTATIVE = "Tentative"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class BorutaConfig:
    n_iter: int = 100
    alpha: float = 0.05
    n_trees: int = 100
    max_depth: int = 7
    min_leaf: int = 5
    min_shadows: int = 5
    seed: int = 0


@dataclass(frozen=True)
class BorutaResult:
    decisions: tuple
    hits: np.ndarray
    n_iter: int


def _oob_permutation_importance(X, y, n_trees, max_depth, min_leaf, n_try, rng):
    """Mean out-of-bag increase in squared error when one column is shuffled.

    Features a tree never splits on score zero for that tree.
    """
    order = canonical_rows(X, y)
    X, y = np.ascontiguousarray(X[order]), y[order]
    n, p = X.shape
    imp = np.zeros(p)
    h = np.ones(n)
    for _ in range(n_trees):
        rows = rng.integers(0, n, n)
        tree = grow(X, -y, h, rows, max_depth, min_leaf, 0.0, 0.0, n_try, int(rng.integers(2 ** 32)))
        in_bag = np.zeros(n, dtype=bool)
        in_bag[rows] = True
        oob = np.flatnonzero(~in_bag)
        if len(oob) < 2:
            continue
        Xo, yo = X[oob], y[oob]
        base = np.mean((tree.predict(Xo) - yo) ** 2)
        for j in np.unique(tree.feature[tree.feature >= 0]):
            Xp = Xo.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            imp[j] += np.mean((tree.predict(Xp) - yo) ** 2) - base
    return imp / max(n_trees, 1)


def boruta(X, y, config: BorutaConfig = BorutaConfig()) -> BorutaResult:
    """Compare each feature's forest importance with its shuffled shadows.

    Importance is out-of-bag permutation importance, so a feature that only
    fits the training sample by chance earns nothing. A hit is recorded when
    a real feature beats the best shadow. After all iterations a two-sided
    binomial test (p = 1/2) at ``alpha`` confirms features hit more often than
    chance and rejects those hit less often. Shadow columns are repeated
    until there are at least ``min_shadows``; each node tries
    floor(sqrt(columns)) features.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if p < 2:
        raise ValueError("boruta needs at least 2 features")
    if n < 20:
        raise ValueError(f"boruta needs at least 20 samples, got {n}")
    rng = np.random.default_rng(config.seed)
    hits = np.zeros(p, dtype=np.int64)
    src = list(range(p))
    while len(src) < config.min_shadows:
        src = src + src
    q = p + len(src)
    n_try = max(1, int(np.sqrt(q)))
    for _ in range(config.n_iter):
        shadow = np.column_stack([rng.permutation(X[:, j]) for j in src])
        imp = _oob_permutation_importance(np.hstack([X, shadow]), y, config.n_trees, config.max_depth,
                                          config.min_leaf, n_try, rng)
        hits += imp[:p] > imp[p:].max()
    decisions = []
    for h in hits:
        if config.n_iter == 0:
            decisions.append(Decision.TENTATIVE)
            continue
        pval = binomtest(int(h), config.n_iter, 0.5, alternative="two-sided").pvalue
        if pval < config.alpha:
            decisions.append(Decision.CONFIRMED if h > config.n_iter / 2 else Decision.REJECTED)
        else:
            decisions.append(Decision.TENTATIVE)
    return BorutaResult(tuple(decisions), hits, config.n_iter)


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple
    mi: dict
    decisions: dict
    fallback: str = ""


def select_features(X, y, names, mi_threshold: float = 0.1, bins: int = 10,
                    boruta_config: BorutaConfig = BorutaConfig()) -> SelectionResult:
    """MI filter (> threshold) followed by Boruta on the survivors.

    Confirmed and tentative features are kept. If Boruta keeps nothing the
    MI survivors are used; if MI keeps nothing every feature is used.
    """
    X = np.asarray(X, dtype=np.float64)
    names = tuple(names)
    b = min(bins, max(2, len(y) // 2))
    mi = {nm: mutual_information(X[:, j], y, b) for j, nm in enumerate(names)}
    passed = [j for j, nm in enumerate(names) if mi[nm] > mi_threshold]
    if not passed:
        log.warning("no feature passed the MI threshold %.3g; keeping all", mi_threshold)
        return SelectionResult(names, mi, {}, "all")
    if len(passed) < 2 or len(y) < 20:
        return SelectionResult(tuple(names[j] for j in passed), mi, {}, "mi")
    res = boruta(X[:, passed], y, boruta_config)
    decisions = {names[j]: d.value for j, d in zip(passed, res.decisions)}
    kept = tuple(names[j] for j, d in zip(passed, res.decisions) if d is not Decision.REJECTED)
    if not kept:
        log.warning("boruta rejected every feature; falling back to the MI set")
        return SelectionResult(tuple(names[j] for j in passed), mi, decisions, "mi")
    return SelectionResult(kept, mi, decisions)
