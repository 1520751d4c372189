"""Procedural potted plants with analytically known total leaf area.

Geometry is built in a plant frame (cm, pot rim centred at the origin in the
Z = 0 plane) and then moved into a random "raw" frame, as a structure-from-
motion export would be, so that the refinement stage has real work to do.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import CameraPoses, Cultivar, Dataset, Experiment, PointCloud, Sample, ValidationError
from .io import save_ply, write_camera_poses, write_dataset_csv

log = logging.getLogger(__name__)

# provenance labels
LEAF, STEM, POT, SOIL, OUTLIER = 0, 1, 2, 3, 4

# base colors (r, g, b); brightness is varied multiplicatively, which keeps
# the green index of each class fixed
FOLIAGE_RGB = (70.0, 140.0, 55.0)  # I_g = +0.33
POT_RGB = (190.0, 95.0, 65.0)  # I_g = -0.33
STEM_RGB = (115.0, 85.0, 55.0)  # I_g = -0.15, dismissed
SOIL_RGB = (95.0, 70.0, 50.0)  # I_g = -0.15, dismissed


class SpecError(ValidationError):
    pass


def _check_range(name, rng_):
    lo, hi = rng_
    if not (lo > 0 and hi >= lo):
        raise SpecError(f"{name} must be a positive interval (lo <= hi), got {rng_}")


@dataclass(frozen=True)
class PlantSpec:
    n_leaves: int = 16
    leaf_area_range: tuple = (60.0, 150.0)
    stem_height_range: tuple = (20.0, 32.0)
    pot_diameter: float = 15.0
    pot_height: float = 12.0
    points_per_cm2: float = 4.0
    noise_sigma: float = 0.08
    cultivar: Cultivar = Cultivar.MOHAMED
    experiment: Experiment = Experiment.ONE

    def __post_init__(self):
        if int(self.n_leaves) != self.n_leaves or self.n_leaves < 1:
            raise SpecError(f"a plant needs at least one leaf, got n_leaves={self.n_leaves}")
        _check_range("leaf_area_range", self.leaf_area_range)
        _check_range("stem_height_range", self.stem_height_range)
        if not self.points_per_cm2 > 0:
            raise SpecError("points_per_cm2 must be positive")
        if not self.pot_diameter > 0 or not self.pot_height > 0:
            raise SpecError("pot dimensions must be positive")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be non-negative")
        object.__setattr__(self, "cultivar", Cultivar(self.cultivar))
        object.__setattr__(self, "experiment", Experiment(int(self.experiment)))


@dataclass(frozen=True)
class Leaf:
    area: float  # one-sided, pi * a * b
    distance: float  # centroid distance from the stem axis
    center: tuple
    semi_axes: tuple


@dataclass(frozen=True, eq=False)
class SyntheticPlant:
    cloud: PointCloud
    labels: np.ndarray  # provenance label per point
    leaf_ids: np.ndarray  # leaf index per point, -1 off-leaf
    leaves: tuple
    spec: PlantSpec

    @property
    def tla(self) -> float:
        return float(sum(leaf.area for leaf in self.leaves))


def _colors(rng, base, n, jitter=3.0):
    shade = rng.uniform(0.75, 1.15, size=(n, 1))
    c = np.asarray(base)[None, :] * shade + rng.normal(0.0, jitter, size=(n, 3))
    return np.clip(np.rint(c), 0, 255).astype(np.uint8)


def _n_samples(area, density, rng):
    return max(int(rng.poisson(area * density)), 0)


def _leaf_points(rng, a, b, n):
    r = np.sqrt(rng.uniform(0.0, 1.0, n))
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([a * r * np.cos(th), b * r * np.sin(th), np.zeros(n)])


def generate_plant(spec: PlantSpec, seed) -> SyntheticPlant:
    """Sample one plant in its own frame; a pure function of (spec, seed)."""
    rng = np.random.default_rng(seed)
    dens = spec.points_per_cm2
    stem_h = rng.uniform(*spec.stem_height_range)
    pts, cols, labels, leaf_ids = [], [], [], []

    def add(p, base, label, leaf=-1):
        pts.append(p)
        cols.append(_colors(rng, base, len(p)))
        labels.append(np.full(len(p), label, dtype=np.int8))
        leaf_ids.append(np.full(len(p), leaf, dtype=np.int32))

    # pot wall, rim at z = 0
    rp = spec.pot_diameter / 2.0
    n = _n_samples(2 * np.pi * rp * spec.pot_height, dens, rng)
    th = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-spec.pot_height, 0.0, n)
    add(np.column_stack([rp * np.cos(th), rp * np.sin(th), z]), POT_RGB, POT)

    # soil surface just below the rim
    n = _n_samples(np.pi * (rp - 0.3) ** 2, dens, rng)
    r = (rp - 0.3) * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    add(np.column_stack([r * np.cos(th), r * np.sin(th), np.full(n, -1.0)]), SOIL_RGB, SOIL)

    # stem
    rs = 0.5
    n = _n_samples(2 * np.pi * rs * (stem_h + 1.0), dens, rng)
    th = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-1.0, stem_h, n)
    add(np.column_stack([rs * np.cos(th), rs * np.sin(th), z]), STEM_RGB, STEM)

    leaves = []
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phase = rng.uniform(0, 2 * np.pi)
    for i in range(spec.n_leaves):
        area = rng.uniform(*spec.leaf_area_range)
        ratio = rng.uniform(1.6, 2.4)
        b = np.sqrt(area / (np.pi * ratio))
        a = ratio * b
        tilt = np.radians(rng.uniform(5.0, 45.0))
        az = phase + i * golden + rng.normal(0.0, 0.2)
        height = rng.uniform(0.25, 1.0) * stem_h
        petiole = rng.uniform(1.0, 5.0)
        dist = rs + petiole + a * np.cos(tilt)
        radial = np.array([np.cos(az), np.sin(az), 0.0])
        side = np.array([-np.sin(az), np.cos(az), 0.0])
        # major axis points outward and droops by the tilt angle
        major = np.cos(tilt) * radial - np.sin(tilt) * np.array([0.0, 0.0, 1.0])
        center = dist * radial + np.array([0.0, 0.0, height])
        local = _leaf_points(rng, a, b, _n_samples(area, dens, rng))
        p = center + local[:, :1] * major + local[:, 1:2] * side
        if spec.noise_sigma > 0:
            p = p + rng.normal(0.0, spec.noise_sigma, p.shape)
        add(p, FOLIAGE_RGB, LEAF, i)
        leaves.append(Leaf(float(np.pi * a * b), float(dist), tuple(center), (float(a), float(b))))

    cloud = PointCloud(np.vstack(pts), np.vstack(cols))
    return SyntheticPlant(cloud, np.concatenate(labels), np.concatenate(leaf_ids), tuple(leaves), spec)


@dataclass(frozen=True, eq=False)
class Stage:
    layer: int
    cloud: PointCloud
    labels: np.ndarray
    tla: float
    n_leaves: int


def peel_layers(plant: SyntheticPlant, n_layers: int, include_bare: bool = False) -> list:
    """Remove leaves outermost-first in ``n_layers`` near-equal groups.

    Stage k keeps every leaf outside the first k groups. The leafless stage
    is only returned with ``include_bare``.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be at least 1")
    n = len(plant.leaves)
    if n_layers > n:
        warnings.warn(f"n_layers={n_layers} exceeds {n} leaves; clamped to {n}", stacklevel=2)
        n_layers = n
    dist = np.array([leaf.distance for leaf in plant.leaves])
    order = np.lexsort((np.arange(n), -dist))  # farthest first, index tiebreak
    groups = np.array_split(order, n_layers)
    stages = []
    removed = np.zeros(n, dtype=bool)
    last = n_layers + 1 if include_bare else n_layers
    for k in range(last):
        if k > 0:
            removed[groups[k - 1]] = True
        keep_leaf = ~removed
        pmask = (plant.leaf_ids < 0) | keep_leaf[np.maximum(plant.leaf_ids, 0)]
        tla = float(sum(plant.leaves[i].area for i in range(n) if keep_leaf[i]))
        stages.append(Stage(k, plant.cloud.subset(pmask), plant.labels[pmask], tla, int(keep_leaf.sum())))
    return stages


def orbit_cameras(center, radius: float, rings=(-30.0, 0.0, 30.0), per_ring: int = 12) -> np.ndarray:
    """Camera centres on horizontal rings around ``center``, all at ``radius``."""
    out = []
    for j, elev in enumerate(np.radians(rings)):
        az = np.arange(per_ring) * 2 * np.pi / per_ring + j * np.pi / per_ring
        out.append(np.column_stack([
            radius * np.cos(elev) * np.cos(az),
            radius * np.cos(elev) * np.sin(az),
            np.full(per_ring, radius * np.sin(elev)),
        ]))
    return np.vstack(out) + np.asarray(center, dtype=float)


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass(frozen=True)
class SpecDistribution:
    """Ranges from which per-plant specs are drawn."""

    n_leaves_range: tuple
    leaf_area_range: tuple
    stem_height_range: tuple = (20.0, 32.0)

    def draw(self, rng, cultivar, experiment, **overrides) -> PlantSpec:
        lo, hi = self.n_leaves_range
        return PlantSpec(
            n_leaves=int(rng.integers(lo, hi + 1)),
            leaf_area_range=self.leaf_area_range,
            stem_height_range=self.stem_height_range,
            cultivar=cultivar,
            experiment=experiment,
            **overrides,
        )


# the second experiment has more and larger leaves
EXPERIMENT_DISTRIBUTIONS = {
    Experiment.ONE: SpecDistribution((10, 22), (50.0, 130.0)),
    Experiment.TWO: SpecDistribution((16, 28), (80.0, 190.0)),
}


@dataclass(frozen=True)
class SynthConfig:
    camera_radius: float = 70.0
    outlier_fraction: float = 0.02
    outlier_extent: float = 1.6  # outlier box half-side in camera radii
    raw_scale_range: tuple = (0.005, 0.05)  # raw units per cm
    points_per_cm2: float = 4.0
    noise_sigma: float = 0.08


def clutter(rng, n_plant_points: int, center, config: SynthConfig = SynthConfig()):
    """Randomly colored background points, as a photogrammetry export carries.

    Half fill a box around the plant, half reach out to ``outlier_extent``
    camera radii. Returns (points, colors).
    """
    n_out = int(round(config.outlier_fraction * n_plant_points))
    n_near = n_out // 2
    near = 0.5 * config.camera_radius
    far = config.outlier_extent * config.camera_radius
    pts = np.vstack([
        rng.uniform(-near, near, (n_near, 3)),
        rng.uniform(-far, far, (n_out - n_near, 3)),
    ]) + np.asarray(center, dtype=float)
    return pts, rng.integers(0, 256, (n_out, 3)).astype(np.uint8)


def _to_raw(points, scale, R, t):
    return scale * points @ R.T + t


def generate_dataset(
    out_dir,
    n_plants: int = 33,
    layers=6,
    seed: int = 0,
    distributions: Optional[dict] = None,
    config: SynthConfig = SynthConfig(),
) -> Dataset:
    """Write stage clouds, camera sidecars and ground truth under ``out_dir/dataset``.

    ``layers`` is an int or an inclusive (lo, hi) range drawn per plant.
    Plant i uses the RNG stream (seed, i), so output does not depend on the
    order plants are generated in.
    """
    if n_plants < 1:
        raise ValueError("n_plants must be at least 1")
    dists = distributions or EXPERIMENT_DISTRIBUTIONS
    root = Path(out_dir) / "dataset"
    root.mkdir(parents=True, exist_ok=True)
    cultivars = list(Cultivar)
    n_exp1 = (n_plants + 1) // 2
    samples = []
    for i in range(n_plants):
        rng = np.random.default_rng([seed, i])
        experiment = Experiment.ONE if i < n_exp1 else Experiment.TWO
        cultivar = cultivars[i % len(cultivars)]
        spec = dists[experiment].draw(
            rng, cultivar, experiment,
            points_per_cm2=config.points_per_cm2, noise_sigma=config.noise_sigma,
        )
        plant_seed = int(rng.integers(2 ** 63))
        plant = generate_plant(spec, plant_seed)
        n_layers = layers if np.isscalar(layers) else int(rng.integers(layers[0], layers[1] + 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            stages = peel_layers(plant, int(n_layers))

        # one raw frame per plant, as if all stages were registered together
        scale = float(np.exp(rng.uniform(*np.log(config.raw_scale_range))))
        R = random_rotation(rng)
        t = rng.uniform(-5.0, 5.0, 3)
        zc = 0.45 * spec.stem_height_range[1]
        cams = orbit_cameras((0.0, 0.0, zc), config.camera_radius)

        pid = f"P{i + 1:03d}"
        pdir = root / pid
        pdir.mkdir(exist_ok=True)
        (pdir / "cameras.json").write_bytes(write_camera_poses(CameraPoses(_to_raw(cams, scale, R, t))))
        for st in stages:
            out_p, out_c = clutter(rng, len(st.cloud), (0.0, 0.0, zc), config)
            pts = np.vstack([st.cloud.points, out_p])
            cols = np.vstack([st.cloud.colors, out_c])
            save_ply(pdir / f"layer_{st.layer}.ply", PointCloud(_to_raw(pts, scale, R, t), cols))
            samples.append(Sample(pid, cultivar, experiment, st.layer, None, st.tla))
        log.debug("plant %s: %d leaves, %d stages, tla %.1f", pid, spec.n_leaves, len(stages), plant.tla)
    ds = Dataset(tuple(samples))
    (root / "ground_truth.csv").write_bytes(write_dataset_csv(ds))
    return ds
