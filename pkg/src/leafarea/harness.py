"""Splits, cross-validated random search and the reconstruction x model sweep."""

from __future__ import annotations

import enum
import logging
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .core import FEATURE_NAMES, Dataset, LeafAreaError, MeshFeatures, ValidationError
from .features import extract_features
from .io import load_ply, read_camera_poses, read_dataset_csv
from .mlkit import DEFAULT_SPACES, BorutaConfig, Decision, EvalMetrics, ModelKind, fit_model, sample_params, select_features
from .mlkit.metrics import mae as _mae, r2 as _r2
from .mlkit.mlp import DivergenceError
from .reconstruct import (
    DEFAULT_GRID, Algorithm, AlphaComplex, ReconstructionParams, estimate_normals, reconstruct,
)
from .refine import ColorFilterParams, DbscanParams, refine_cloud

log = logging.getLogger(__name__)

REPORT_SCHEMA = "tla-report/1"


def derive_seed(master: int, *key) -> int:
    """Stable 32-bit seed from a master seed and a key (no Python hash salt)."""
    text = "/".join(str(k) for k in key)
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, zlib.crc32(text.encode())])
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------- splits


class SplitMode(str, enum.Enum):
    STRATIFIED = "stratified"
    CROSS_EXPERIMENT = "cross_experiment"


@dataclass(frozen=True)
class SplitPlan:
    mode: SplitMode = SplitMode.STRATIFIED
    test_fraction: float = 0.3
    strat_bins: int = 5
    train_experiment: int = 1
    seed: int = 0
    stratify_by: str = "tla"

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if not 0 < self.test_fraction < 1:
            raise ValidationError("test_fraction must be in (0, 1)")
        if self.strat_bins < 1:
            raise ValidationError("strat_bins must be >= 1")

    @property
    def name(self) -> str:
        if self.mode is SplitMode.STRATIFIED:
            return "stratified"
        return f"exp{self.train_experiment}_to_exp{3 - self.train_experiment}"


def _tla_bins(tla: np.ndarray, n_bins: int) -> np.ndarray:
    """Quantile bins with equal counts (ties split by position)."""
    order = np.argsort(tla, kind="stable")
    bins = np.empty(len(tla), dtype=np.int64)
    bins[order] = np.arange(len(tla)) * n_bins // len(tla)
    return bins


def _merge_small_bins(bins: np.ndarray) -> np.ndarray:
    labels = sorted(set(bins.tolist()))
    while len(labels) > 1:
        counts = {b: int(np.sum(bins == b)) for b in labels}
        small = [b for b in labels if counts[b] < 2]
        if not small:
            break
        b = small[0]
        i = labels.index(b)
        target = labels[i - 1] if i > 0 else labels[i + 1]
        warnings.warn(f"stratification bin {b} has {counts[b]} sample(s); merged into bin {target}", stacklevel=3)
        bins = np.where(bins == b, target, bins)
        labels.remove(b)
    return bins


def stratified_split(dataset, plan: SplitPlan = SplitPlan()):
    """Indices (train, test): within every stratum, a seeded shuffle sends
    round(test_fraction x size) samples to the test set."""
    samples = list(dataset)
    n = len(samples)
    if n < plan.strat_bins:
        raise ValidationError(f"need at least {plan.strat_bins} samples to stratify, got {n}")
    if plan.stratify_by == "cultivar":
        names = sorted({s.cultivar.value for s in samples})
        bins = np.array([names.index(s.cultivar.value) for s in samples])
    else:
        bins = _tla_bins(np.array([s.tla for s in samples]), plan.strat_bins)
    bins = _merge_small_bins(bins)
    rng = np.random.default_rng(plan.seed)
    test = []
    for b in sorted(set(bins.tolist())):
        members = np.flatnonzero(bins == b)
        members = members[rng.permutation(len(members))]
        k = int(math.floor(plan.test_fraction * len(members) + 0.5))
        test.extend(members[:k].tolist())
    test = np.array(sorted(test), dtype=np.int64)
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def experiment_split(dataset, train_experiment: int = 1):
    exps = np.array([int(s.experiment) for s in dataset])
    if train_experiment not in exps:
        raise ValidationError(f"no samples from experiment {train_experiment}")
    if np.all(exps == train_experiment):
        raise ValidationError("cross-experiment split needs samples from both experiments")
    return np.flatnonzero(exps == train_experiment), np.flatnonzero(exps != train_experiment)


def make_split(dataset, plan: SplitPlan):
    if plan.mode is SplitMode.STRATIFIED:
        return stratified_split(dataset, plan)
    return experiment_split(dataset, plan.train_experiment)


def kfold(n: int, k: int = 6, seed: int = 0):
    """Seeded shuffle then contiguous folds; earlier folds take the remainder."""
    if n < k:
        raise ValidationError(f"cannot make {k} folds from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    out = []
    start = 0
    for s in sizes:
        val = np.sort(perm[start:start + s])
        fit = np.sort(np.concatenate([perm[:start], perm[start + s:]]))
        out.append((fit, val))
        start += s
    return out


# -------------------------------------------------------------- random search


class SearchError(LeafAreaError):
    pass


@dataclass(frozen=True)
class Trial:
    params: dict
    cv_r2: float
    cv_mae: float
    error: str = ""


@dataclass(frozen=True)
class SearchResult:
    best_params: dict
    cv_r2: float
    cv_mae: float
    trials: tuple
    best_fold_model: object = None


def _key(params: dict) -> str:
    return repr(sorted(params.items()))


def random_search(kind, space, X, y, names, k: int = 6, n_iter: int = 30, seed: int = 0,
                  keep_fold_model: bool = False) -> SearchResult:
    """Score ``n_iter`` sampled configurations by mean validation R^2 over k folds.

    Ties go to the lower mean MAE, then to the earlier sample. Identical
    samples (e.g. a collapsed space) are evaluated once.
    """
    kind = ModelKind(kind)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    folds = kfold(len(y), k, seed)
    seen = {}
    trials = []
    for i in range(n_iter):
        params = sample_params(space, rng)
        key = _key(params)
        if key in seen:
            trials.append(seen[key])
            continue
        r2s, maes, err = [], [], ""
        for f, (fit_idx, val_idx) in enumerate(folds):
            try:
                m = fit_model(kind, params, X[fit_idx], y[fit_idx], names, seed=derive_seed(seed, "fit", f))
            except DivergenceError as exc:
                err = str(exc)
                break
            pred = m.predict(X[val_idx], names)
            if not np.all(np.isfinite(pred)):
                err = "non-finite predictions"
                break
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                r2s.append(_r2(y[val_idx], pred))
            maes.append(_mae(y[val_idx], pred))
        if err:
            t = Trial(params, -math.inf, math.inf, err)
        else:
            r2v = float(np.mean(r2s)) if not np.any(np.isnan(r2s)) else -math.inf
            t = Trial(params, r2v, float(np.mean(maes)))
        seen[key] = t
        trials.append(t)
    ok = [t for t in trials if not t.error]
    if not ok:
        raise SearchError(f"all {len(trials)} {kind.value} configurations failed: "
                          + "; ".join(sorted({t.error for t in trials})))
    best = None
    for t in trials:  # first-sampled wins remaining ties
        if t.error:
            continue
        if best is None or t.cv_r2 > best.cv_r2 or (t.cv_r2 == best.cv_r2 and t.cv_mae < best.cv_mae):
            best = t
    fold_model = None
    if keep_fold_model:
        best_r2 = -math.inf
        for f, (fit_idx, val_idx) in enumerate(folds):
            m = fit_model(kind, best.params, X[fit_idx], y[fit_idx], names, seed=derive_seed(seed, "fit", f))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                s = _r2(y[val_idx], m.predict(X[val_idx], names))
            if fold_model is None or s > best_r2:
                fold_model, best_r2 = m, s
    return SearchResult(best.params, best.cv_r2, best.cv_mae, tuple(trials), fold_model)


# ---------------------------------------------------------------- the sweep


@dataclass(frozen=True)
class SweepGrid:
    """Parameters to try per algorithm; defaults to the full lists."""

    values: dict = field(default_factory=lambda: {a: tuple(v) for a, v in DEFAULT_GRID.items()})

    def __post_init__(self):
        vals = {}
        for a, v in self.values.items():
            alg = Algorithm.parse(a) if isinstance(a, str) and not isinstance(a, Algorithm) else Algorithm(a)
            v = tuple(v)
            if not v:
                raise ValidationError(f"empty parameter list for {alg.value}")
            vals[alg] = v
        object.__setattr__(self, "values", vals)

    def params(self) -> list:
        out = []
        for alg in Algorithm:
            for v in self.values.get(alg, ()):
                out.append(ReconstructionParams(alg, v))
        return out


@dataclass
class StageResult:
    plant_id: str
    layer: int
    features: dict  # ReconstructionParams label key -> MeshFeatures
    failures: dict
    error: str = ""


def _param_key(p: ReconstructionParams) -> str:
    return f"{p.algorithm.value}:{p.label}"


def _process_stage(args):
    """Refine one stage cloud and extract features for every grid parameter."""
    plant_id, layer, ply_path, cam_path, params_list, cfg = args
    feats, fails = {}, {}
    try:
        cloud = load_ply(ply_path)
        cams = read_camera_poses(Path(cam_path).read_bytes()) if cam_path else None
        res = refine_cloud(
            cloud, cams, cfg.crop.side_factor,
            DbscanParams(cfg.dbscan.eps_rel, cfg.dbscan.min_samples),
            ColorFilterParams(cfg.color.canopy_min_ig, cfg.color.pot_max_ig),
            cfg.pot.known_diameter_cm,
        )
    except LeafAreaError as exc:
        return StageResult(plant_id, layer, {}, {}, f"{getattr(exc, 'stage', 'refine')}: {exc}")
    canopy = res.canopy
    rcfg = cfg.reconstruction()
    complex_ = None
    oriented = None
    for p in params_list:
        key = _param_key(p)
        try:
            if p.algorithm is Algorithm.ALPHA:
                if complex_ is None:
                    complex_ = AlphaComplex(canopy.points, seed=rcfg.seed)
                mesh = complex_.shape(p.value)
            elif p.algorithm in (Algorithm.POISSON, Algorithm.BALL_PIVOTING):
                if oriented is None:
                    oriented = estimate_normals(canopy, rcfg.normals_k, res.cameras)
                mesh = reconstruct(oriented, p, rcfg)
            else:
                mesh = reconstruct(canopy, p, rcfg)
            feats[key] = extract_features(mesh, cfg.features.axis_extent)
        except (LeafAreaError, ValueError) as exc:
            fails[key] = str(exc)
            feats[key] = MeshFeatures.zeros()
    return StageResult(plant_id, layer, feats, fails)


def _map(fn, tasks, threads):
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def compute_features(dataset_dir, dataset: Dataset, params_list, cfg: RunConfig):
    """Feature dicts for every (sample, parameter), in dataset order."""
    root = Path(dataset_dir)
    tasks = []
    for s in dataset:
        pdir = root / s.plant_id
        cam = pdir / "cameras.json"
        tasks.append((s.plant_id, s.layer, str(pdir / f"layer_{s.layer}.ply"),
                      str(cam) if cam.exists() else None, list(params_list), cfg))
    return _map(_process_stage, tasks, cfg.threads)


@dataclass(frozen=True)
class ReportRow:
    algorithm: str
    parameter: str
    model: str
    plan: str
    hyperparameters: dict
    cv_r2: float
    r2: float
    mae: float
    bias: float
    relative_mae: float
    n_train: int
    n_test: int
    selected: tuple
    approx: bool
    n_failed: int
    seed: int
    refit: bool
    plant_ids: tuple = ()
    layers: tuple = ()
    actual: tuple = ()
    predicted: tuple = ()
    importance: dict = field(default_factory=dict)
    error: str = ""


@dataclass
class SweepReport:
    rows: list
    summary: dict
    config: dict
    best: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    selection: dict = field(default_factory=dict)  # "plan|alg:param" -> selection record
    schema: str = REPORT_SCHEMA


def best_rows(rows) -> list:
    """Max-R^2 row per (plan, algorithm, model); ties to lower MAE, then grid order."""
    best = {}
    order = []
    for r in rows:
        key = (r.plan, r.algorithm, r.model)
        if key not in best:
            order.append(key)
            best[key] = r
            continue
        cur = best[key]
        if _better(r, cur):
            best[key] = r
    return [best[k] for k in order]


def _better(r, cur) -> bool:
    a = r.r2 if np.isfinite(r.r2) else -math.inf
    b = cur.r2 if np.isfinite(cur.r2) else -math.inf
    return a > b or (a == b and r.mae < cur.mae)


@dataclass(frozen=True, eq=False)
class CellFit:
    """Everything learned for one (features, model, plan) cell; training rows only."""

    search: SearchResult
    model: object


def fit_on_train(kind, X, y, names, train, selected, cfg: RunConfig, seed: int) -> CellFit:
    """Search hyperparameters and fit the final model using only ``train`` rows."""
    kind = ModelKind(kind)
    cols = [list(names).index(s) for s in selected]
    Xtr, ytr = np.asarray(X)[train][:, cols], np.asarray(y)[train]
    res = random_search(kind, DEFAULT_SPACES[kind], Xtr, ytr, list(selected), cfg.search.k_folds,
                        cfg.search.n_iter, seed, keep_fold_model=not cfg.search.refit)
    if cfg.search.refit:
        model = fit_model(kind, res.best_params, Xtr, ytr, list(selected), seed=derive_seed(seed, "refit"))
    else:
        model = res.best_fold_model
    return CellFit(res, model)


def select_on_train(X, y, names, train, cfg: RunConfig, seed: int):
    """Feature selection from the training rows; None when disabled."""
    if not cfg.selection.enabled:
        return None
    return select_features(
        np.asarray(X)[train], np.asarray(y)[train], list(names), cfg.selection.mi_threshold,
        cfg.selection.mi_bins,
        BorutaConfig(n_iter=cfg.selection.boruta_n_iter, alpha=cfg.selection.boruta_alpha, seed=seed),
    )


def _train_task(args):
    (alg, label, plan_name, kind, X, y, names, train, test, ids, layers, cfg, seed, approx, n_failed, selected) = args
    kind = ModelKind(kind)
    common = dict(algorithm=alg, parameter=label, model=kind.value, plan=plan_name, n_train=len(train),
                  n_test=len(test), selected=tuple(selected), approx=approx, n_failed=n_failed, seed=seed,
                  refit=cfg.search.refit)
    try:
        cell = fit_on_train(kind, X, y, names, train, selected, cfg, seed)
        cols = [names.index(s) for s in selected]
        pred = cell.model.predict(X[test][:, cols], list(selected))
    except LeafAreaError as exc:
        return ReportRow(hyperparameters={}, cv_r2=math.nan, r2=math.nan, mae=math.nan, bias=math.nan,
                         relative_mae=math.nan, error=str(exc), **common)
    yte = y[test]
    m = EvalMetrics.compute(yte, pred)
    return ReportRow(
        hyperparameters=_plain(cell.search.best_params), cv_r2=cell.search.cv_r2, r2=m.r2, mae=m.mae,
        bias=m.bias, relative_mae=m.mae / float(np.mean(yte)),
        plant_ids=tuple(ids[i] for i in test), layers=tuple(int(layers[i]) for i in test),
        actual=tuple(float(v) for v in yte), predicted=tuple(float(v) for v in pred),
        importance=cell.model.importance() if kind is ModelKind.GBT else {}, **common,
    )


def _plain(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out


def run_sweep(dataset_dir, grid: SweepGrid = SweepGrid(), plans: Sequence[SplitPlan] = (SplitPlan(),),
              models: Sequence = tuple(ModelKind), cfg: RunConfig = RunConfig(),
              out_dir=None, stage_results=None, dataset: Optional[Dataset] = None) -> SweepReport:
    """Reconstruct every stage for every grid parameter, then train and test
    every model under every split plan.

    Feature selection and all scaling are learned on each plan's training
    part only. ``stage_results`` may be passed to reuse computed features and
    ``dataset`` to override the ground-truth table.
    """
    root = Path(dataset_dir)
    if dataset is None:
        dataset = read_dataset_csv((root / "ground_truth.csv").read_bytes())
    params_list = grid.params()
    if stage_results is None:
        stage_results = compute_features(root, dataset, params_list, cfg)
    failures = [{"plant_id": r.plant_id, "layer": r.layer, "error": r.error} for r in stage_results if r.error]
    usable = [i for i, r in enumerate(stage_results) if not r.error]
    ds = dataset.subset(usable)
    results = [stage_results[i] for i in usable]
    y = ds.tla
    ids = tuple(s.plant_id for s in ds)
    layers = np.array([s.layer for s in ds])
    names = list(FEATURE_NAMES)
    models = [ModelKind(m) if not isinstance(m, str) else ModelKind.parse(m) for m in models]

    splits = {p.name: make_split(ds, p) for p in plans}
    tasks = []
    selections = {}
    for p in params_list:
        key = _param_key(p)
        X = np.array([r.features[key].as_array() for r in results])
        n_failed = sum(1 for r in results if key in r.failures)
        approx = p.algorithm is Algorithm.POISSON and 2 ** int(p.value) > cfg.poisson.grid_cap
        for plan in plans:
            train, test = splits[plan.name]
            sel = select_on_train(X, y, names, train, cfg, derive_seed(cfg.seed, "select", key, plan.name))
            if sel is not None:
                selected = sel.selected
                selections[f"{plan.name}|{key}"] = {
                    "selected": list(sel.selected), "mi": {k: float(v) for k, v in sel.mi.items()},
                    "decisions": {k: Decision(v).value for k, v in sel.decisions.items()},
                    "fallback": sel.fallback}
            else:
                selected = tuple(names)
            for kind in models:
                seed = derive_seed(cfg.seed, key, plan.name, kind.value)
                tasks.append((p.algorithm.value, p.label, plan.name, kind.value, X, y, names, train, test,
                              ids, layers, cfg, seed, approx, n_failed, tuple(selected)))
    rows = _map(_train_task, tasks, cfg.threads)
    report = SweepReport(rows=rows, summary=summarize(ds), config=_report_config(cfg), failures=failures,
                         selection=dict(sorted(selections.items())))
    report.best = best_rows(rows)
    if out_dir is not None:
        write_predictions(report, out_dir)
    return report


def _report_config(cfg: RunConfig) -> dict:
    # worker count does not affect results, so it stays out of the report
    d = cfg.to_dict()
    d.pop("threads", None)
    return d


def write_predictions(report: SweepReport, out_dir) -> None:
    """predictions/<plan>/<algorithm>/<model>.csv for every best row."""
    base = Path(out_dir) / "predictions"
    for r in report.best:
        if r.error:
            continue
        d = base / r.plan / r.algorithm
        d.mkdir(parents=True, exist_ok=True)
        lines = ["plant_id,layer,actual_cm2,predicted_cm2"]
        lines += [f"{p},{l},{a!r},{q!r}" for p, l, a, q in zip(r.plant_ids, r.layers, r.actual, r.predicted)]
        (d / f"{r.model}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ summary


SUMMARY_FIELDS = ("Min", "Max", "Mean", "Median", "Std")


def _stats(v: np.ndarray) -> dict:
    v = np.sort(np.asarray(v, dtype=np.float64))
    n = len(v)
    mid = n // 2
    median = float(v[mid]) if n % 2 else 0.5 * float(v[mid - 1] + v[mid])
    out = {"Min": float(v[0]), "Max": float(v[-1]), "Mean": float(v.mean()), "Median": median,
           "Std": float(v.std(ddof=1)) if n > 1 else 0.0, "n": n}
    if n == 1:
        out["degenerate"] = True
    return out


def summarize(dataset) -> dict:
    """TLA statistics per experiment and combined (sample standard deviation)."""
    samples = list(dataset)
    if not samples:
        raise ValidationError("cannot summarize an empty dataset")
    out = {}
    for e in sorted({int(s.experiment) for s in samples}):
        out[f"Exp. #{e}"] = _stats([s.tla for s in samples if int(s.experiment) == e])
    out["Combined"] = _stats([s.tla for s in samples])
    return out
