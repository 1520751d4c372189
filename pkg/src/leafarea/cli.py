"""Command-line entry point: ``leafarea <command> ...`` or ``python -m leafarea``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as lio
from .config import RunConfig, load_config
from .core import Dataset, LeafAreaError, TriangleMesh, ValidationError
from .features import extract_features
from .harness import (
    SplitMode, SplitPlan, SweepGrid, compute_features, fit_on_train, make_split, run_sweep, select_on_train,
    derive_seed,
)
from .mlkit import EvalMetrics, ModelKind, TsneParams, tsne
from .mlkit.preprocess import standardize_fit
from .reconstruct import DEFAULT_GRID, Algorithm, ReconstructionParams, reconstruct
from .refine import ColorFilterParams, DbscanParams, MissingReferenceError, RefineError, refine_cloud
from .report import FORMATS, emit_report, load_report, report_to_dict

log = logging.getLogger("leafarea")


class UsageError(LeafAreaError):
    pass


# ----------------------------------------------------------------- helpers


def _resolve_config(args) -> RunConfig:
    data = Path(args.config).read_bytes() if args.config else None
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    elif not (data and "threads" in json.loads(data)) and "threads" not in overrides:
        overrides["threads"] = os.cpu_count() or 1
    cfg = load_config(data, overrides)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def _write(path, data: bytes):
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode("utf-8")


def _parse_param(algorithm: Algorithm, text: str):
    try:
        if algorithm is Algorithm.BALL_PIVOTING:
            return tuple(float(x) for x in text.split(","))
        if algorithm is Algorithm.POISSON:
            return int(text)
        return float(text)
    except ValueError:
        raise ValidationError(f"cannot parse {algorithm.value} parameter {text!r}") from None


def _params(algorithm: Algorithm, text: str) -> ReconstructionParams:
    value = _parse_param(algorithm, text)
    return ReconstructionParams(algorithm, value)


def _refine_args(cfg: RunConfig):
    return dict(
        side_factor=cfg.crop.side_factor,
        dbscan_params=DbscanParams(cfg.dbscan.eps_rel, cfg.dbscan.min_samples),
        color=ColorFilterParams(cfg.color.canopy_min_ig, cfg.color.pot_max_ig),
        known_diameter=cfg.pot.known_diameter_cm,
    )


def _load_cameras(path):
    if path is None or not Path(path).exists():
        raise MissingReferenceError(f"camera poses not found ({path}); cropping needs the camera centroid")
    return lio.read_camera_poses(Path(path).read_bytes())


def _plan(token: str, cfg: RunConfig) -> SplitPlan:
    t = token.strip().lower()
    common = dict(test_fraction=cfg.split.test_fraction, strat_bins=cfg.split.strat_bins, seed=cfg.seed)
    if t == "stratified":
        return SplitPlan(SplitMode.STRATIFIED, stratify_by=cfg.split.stratify_by, **common)
    if t in ("cross_experiment", "exp1_to_exp2", "exp1"):
        return SplitPlan(SplitMode.CROSS_EXPERIMENT, train_experiment=1, **common)
    if t in ("exp2_to_exp1", "exp2"):
        return SplitPlan(SplitMode.CROSS_EXPERIMENT, train_experiment=2, **common)
    raise UsageError(f"unknown split plan {token!r} (stratified, exp1_to_exp2, exp2_to_exp1)")


def _models(text: str):
    try:
        return [ModelKind.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _algorithm(token: str) -> Algorithm:
    try:
        return Algorithm.parse(token)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _grid(args) -> SweepGrid:
    values = {}
    if args.algorithms:
        for tok in args.algorithms.split(","):
            alg = _algorithm(tok)
            values[alg] = DEFAULT_GRID[alg]
    for spec in args.grid or ():
        if "=" not in spec:
            raise UsageError(f"--grid expects algorithm=values, got {spec!r}")
        name, vals = spec.split("=", 1)
        alg = _algorithm(name)
        # ball radii sets are separated by ';', everything else by ','
        parts = vals.split(";") if alg is Algorithm.BALL_PIVOTING else vals.split(",")
        values[alg] = tuple(_parse_param(alg, p) for p in parts if p.strip())
    return SweepGrid(values) if values else SweepGrid()


# ---------------------------------------------------------------- commands


def cmd_refine(args, cfg):
    cloud = lio.load_ply(args.input)
    cam_path = args.cameras or str(Path(args.input).with_name("cameras.json"))
    res = refine_cloud(cloud, _load_cameras(cam_path), **_refine_args(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lio.save_ply(out / "canopy.ply", res.canopy)
    lio.save_ply(out / "pot.ply", res.pot)
    (out / "cameras.json").write_bytes(lio.write_camera_poses(res.cameras))
    t = res.transform
    (out / "transform.json").write_bytes(_json_bytes({
        "scale": t.scale, "rotation": t.rotation.tolist(), "translation": t.translation.tolist(),
        "n_raw": res.n_raw, "n_cropped": res.n_cropped, "n_denoised": res.n_denoised,
        "n_canopy": len(res.canopy), "n_pot": len(res.pot), "n_dismissed": len(res.dismissed),
    }))
    log.info("refine: %d raw -> %d canopy, %d pot points", res.n_raw, len(res.canopy), len(res.pot))


def cmd_reconstruct(args, cfg):
    params = _params(_algorithm(args.algorithm), args.param)
    cloud = lio.load_ply(args.input)
    if isinstance(cloud, TriangleMesh):
        raise ValidationError(f"{args.input} holds a mesh; reconstruction needs a point cloud")
    cams = lio.read_camera_poses(Path(args.cameras).read_bytes()) if args.cameras else None
    mesh = reconstruct(cloud, params, cfg.reconstruction(), cams)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lio.save_ply(out / "mesh.ply", mesh)
    feats = extract_features(mesh, cfg.features.axis_extent)
    (out / "features.json").write_bytes(_json_bytes(_features_doc(feats, params)))


def _features_doc(feats, params=None):
    doc = {"features": {k: (int(v) if k == "n_components" else float(v)) for k, v in feats.as_dict().items()},
           "flags": list(feats.flags)}
    if params is not None:
        doc["algorithm"] = params.algorithm.value
        doc["parameter"] = params.label
    return doc


def cmd_features(args, cfg):
    src = Path(args.input)
    if src.is_dir():
        if not args.algorithm or not args.param:
            raise UsageError("a dataset directory needs --algorithm and --param")
        params = _params(_algorithm(args.algorithm), args.param)
        ds = lio.read_dataset_csv((src / "ground_truth.csv").read_bytes())
        results = compute_features(src, ds, [params], cfg)
        key = f"{params.algorithm.value}:{params.label}"
        keep, samples = [], []
        for s, r in zip(ds, results):
            if r.error:
                log.warning("%s layer %d skipped: %s", s.plant_id, s.layer, r.error)
                continue
            samples.append(dataclasses.replace(s, features=r.features[key]))
        _write(args.out, lio.write_dataset_csv(Dataset(tuple(samples))))
        return
    mesh = lio.load_ply(src)
    if not isinstance(mesh, TriangleMesh):
        raise ValidationError(f"{src} holds a point cloud; features need a mesh")
    _write(args.out, _json_bytes(_features_doc(extract_features(mesh, cfg.features.axis_extent))))


def cmd_synth(args, cfg):
    from .synth import generate_dataset

    layers = args.layers
    if "-" in layers:
        lo, hi = (int(x) for x in layers.split("-", 1))
        layers = (lo, hi)
    else:
        layers = int(layers)
    generate_dataset(args.out, n_plants=args.plants, layers=layers, seed=cfg.seed)
    log.info("synth: wrote %d plants to %s", args.plants, Path(args.out) / "dataset")


def cmd_sweep(args, cfg):
    plans = [_plan(t, cfg) for t in args.plans.split(",")]
    report = run_sweep(args.input, _grid(args), plans, _models(args.models), cfg, out_dir=args.out)
    _write(Path(args.out) / "report.json", emit_report(report, "json"))
    for fmt, ext in (("markdown", "md"), ("csv", "csv")):
        _write(Path(args.out) / f"report.{ext}", emit_report(report, fmt))


def _feature_table(path):
    ds = lio.read_dataset_csv(Path(path).read_bytes())
    X = ds.feature_matrix()
    return ds, X


def cmd_train(args, cfg):
    from .core import FEATURE_NAMES

    ds, X = _feature_table(args.input)
    kind = _models(args.model)[0]
    plan = _plan(args.plan, cfg)
    train, test = make_split(ds, plan)
    y = ds.tla
    names = list(FEATURE_NAMES)
    sel = select_on_train(X, y, names, train, cfg, derive_seed(cfg.seed, "select", plan.name))
    selected = sel.selected if sel is not None else tuple(names)
    seed = derive_seed(cfg.seed, plan.name, kind.value)
    cell = fit_on_train(kind, X, y, names, train, selected, cfg, seed)
    cols = [names.index(s) for s in selected]
    pred = cell.model.predict(X[test][:, cols], list(selected))
    m = EvalMetrics.compute(y[test], pred)
    doc = {"model": cell.model.to_dict(), "plan": plan.name, "selected": list(selected),
           "cv_r2": cell.search.cv_r2, "test": {"r2": m.r2, "mae": m.mae, "bias": m.bias,
                                                  "relative_mae": m.mae / float(np.mean(y[test]))}}
    _write(args.out, _json_bytes(doc))


def cmd_tsne(args, cfg):
    from .core import FEATURE_NAMES

    ds, X = _feature_table(args.input)
    st = standardize_fit(X, FEATURE_NAMES)
    res = tsne(st.apply(X), TsneParams(perplexity=args.perplexity, iters=args.iters, seed=cfg.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["plant_id,layer,experiment,tla_cm2,x,y"]
    for s, (a, b) in zip(ds, res.embedding):
        lines.append(f"{s.plant_id},{s.layer},{int(s.experiment)},{float(s.tla)!r},{float(a)!r},{float(b)!r}")
    (out / "embedding.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "embedding.svg").write_text(scatter_svg(res.embedding, ds.tla), encoding="utf-8")


def cmd_report(args, cfg):
    report = load_report(Path(args.input).read_bytes())
    _write(args.out, emit_report(report, args.format))


# a perceptually ordered ramp (dark purple -> teal -> yellow)
_RAMP = ((68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37))


def _ramp(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    f = t - i
    c = [round(a + (b - a) * f) for a, b in zip(_RAMP[i], _RAMP[i + 1])]
    return "#%02x%02x%02x" % tuple(c)


def scatter_svg(Y, values, size=480, margin=40) -> str:
    """2-D scatter colored by ``values`` with a color bar, as standalone SVG."""
    Y = np.asarray(Y, float)
    v = np.asarray(values, float)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    P = margin + (Y - lo) / span * (size - 2 * margin)
    vlo, vhi = float(v.min()), float(v.max())
    t = (v - vlo) / (vhi - vlo) if vhi > vlo else np.zeros_like(v)
    w = size + 90
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{size}" viewBox="0 0 {w} {size}">',
           f'<rect width="{w}" height="{size}" fill="white"/>']
    for (x, y), ti in zip(P, t):
        out.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="4" fill="{_ramp(ti)}" fill-opacity="0.85"/>')
    bx, top, bot = size + 20, margin, size - margin
    n = 50
    h = (bot - top) / n
    for k in range(n):
        out.append(f'<rect x="{bx}" y="{bot - (k + 1) * h:.2f}" width="16" height="{h + 0.5:.2f}" '
                   f'fill="{_ramp(k / (n - 1))}"/>')
    out.append(f'<text x="{bx}" y="{top - 8}" font-size="11" font-family="sans-serif">TLA (cm²)</text>')
    out.append(f'<text x="{bx + 20}" y="{top + 10}" font-size="10" font-family="sans-serif">{vhi:.0f}</text>')
    out.append(f'<text x="{bx + 20}" y="{bot}" font-size="10" font-family="sans-serif">{vlo:.0f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (falls back to $TLA_SEED)")
    common.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")

    p = argparse.ArgumentParser(prog="leafarea", description="Leaf area estimation from plant point clouds.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("refine", parents=[common], help="crop, denoise, color-filter and scale a raw cloud")
    s.add_argument("input", help="raw point cloud (.ply)")
    s.add_argument("--cameras", help="camera poses JSON (default: cameras.json beside the input)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("reconstruct", parents=[common], help="mesh a canopy cloud and extract features")
    s.add_argument("input", help="canopy point cloud (.ply)")
    s.add_argument("--algorithm", required=True, help="alpha | marching_cubes | poisson | ball_pivoting")
    s.add_argument("--param", required=True, help="alpha, threshold, depth, or four comma-separated radii")
    s.add_argument("--cameras", help="camera poses JSON used to orient normals")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("features", parents=[common], help="features of a mesh, or of every stage in a dataset")
    s.add_argument("input", help="mesh (.ply) or dataset directory")
    s.add_argument("--algorithm")
    s.add_argument("--param")
    s.add_argument("--out", help="output file (default: stdout)")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--plants", type=int, default=33)
    s.add_argument("--layers", default="6", help="layers per plant, or a range like 4-8")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("sweep", parents=[common], help="reconstruction x model sweep over a dataset")
    s.add_argument("input", help="dataset directory (with ground_truth.csv)")
    s.add_argument("--algorithms", help="comma-separated algorithms, each with its full default grid")
    s.add_argument("--grid", action="append", metavar="ALG=V1,V2",
                   help="explicit values for one algorithm; ball radii sets are separated by ';'")
    s.add_argument("--models", default=",".join(m.value for m in ModelKind))
    s.add_argument("--plans", default="stratified,exp1_to_exp2,exp2_to_exp1")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("train", parents=[common], help="fit one model on a feature table")
    s.add_argument("input", help="dataset CSV with feature columns")
    s.add_argument("--model", required=True)
    s.add_argument("--plan", default="stratified")
    s.add_argument("--out", help="model JSON (default: stdout)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tsne", parents=[common], help="2-D t-SNE embedding of a feature table")
    s.add_argument("input", help="dataset CSV with feature columns")
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tsne)

    s = sub.add_parser("report", parents=[common], help="render a sweep report")
    s.add_argument("input", help="report.json")
    s.add_argument("--format", choices=FORMATS, default="markdown")
    s.add_argument("--out", help="output file (default: stdout)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve_config(args)
        args.func(args, cfg)
    except MissingReferenceError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 2
    except RefineError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ValidationError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    except LeafAreaError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
