"""Stratified hold-out vs train-on-experiment-1 / test-on-experiment-2, over master seeds.

Features are computed once; only the splits, searches and model seeds change.

    python scripts/cross_experiment_drop.py --seeds 0 1 2
"""

from __future__ import annotations

import argparse
import logging
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

from leafarea.config import load_config
from leafarea.harness import SplitMode, SplitPlan, SweepGrid, compute_features, run_sweep
from leafarea.synth import generate_dataset


@dataclass(frozen=True)
class DropConfig:
    plants: int = 33
    layers: int = 6
    data_seed: int = 0
    seeds: tuple = (0, 1, 2)
    alphas: tuple = (1.0, 3.0, 5.0)
    models: tuple = ("Lasso", "RF", "GBT")


def best_r2(report, plan):
    return max((r.r2 for r in report.rows if r.plan == plan and math.isfinite(r.r2)), default=math.nan)


def run(cfg: DropConfig, workdir: Path):
    ds = generate_dataset(workdir, n_plants=cfg.plants, layers=cfg.layers, seed=cfg.data_seed)
    grid = SweepGrid({"alpha": cfg.alphas})
    stages = compute_features(workdir / "dataset", ds, grid.params(), load_config())
    rows = []
    for seed in cfg.seeds:
        plans = [SplitPlan(seed=seed), SplitPlan(SplitMode.CROSS_EXPERIMENT, seed=seed)]
        rep = run_sweep(workdir / "dataset", grid, plans, cfg.models, load_config(overrides={"seed": seed}),
                        stage_results=stages, dataset=ds)
        rows.append((seed, best_r2(rep, "stratified"), best_r2(rep, "exp1_to_exp2")))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--plants", type=int, default=33)
    ap.add_argument("--workdir")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = DropConfig(plants=args.plants, seeds=tuple(args.seeds))
    with tempfile.TemporaryDirectory() as tmp:
        rows = run(cfg, Path(args.workdir or tmp))
    print("| seed | best stratified R² | best cross-experiment R² | drop |")
    print("|---:|---:|---:|---:|")
    for seed, s, x in rows:
        print(f"| {seed} | {s:.3f} | {x:.3f} | {s - x:.3f} |")


if __name__ == "__main__":
    main()
