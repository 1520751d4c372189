"""Mesh reconstruction from refined canopy clouds (four algorithms)."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..core import CameraPoses, PointCloud, TriangleMesh
from .alpha import AlphaComplex, alpha_shape
from .ballpivot import ball_pivot, validate_radii
from .delaunay import DegenerateInputError, delaunay3d
from .grid import DensityGrid, marching_cubes_field, marching_cubes_reconstruct, splat_density
from .mcubes import marching_cubes
from .normals import InsufficientPointsError, estimate_normals
from .poisson import MAX_DEPTH, MIN_DEPTH, SolverError, poisson_reconstruct


class Algorithm(str, enum.Enum):
    ALPHA = "alpha"
    MARCHING_CUBES = "marching_cubes"
    POISSON = "poisson"
    BALL_PIVOTING = "ball_pivoting"

    @classmethod
    def parse(cls, token: str) -> "Algorithm":
        aliases = {
            "alpha": cls.ALPHA, "alphashape": cls.ALPHA, "alpha_shape": cls.ALPHA,
            "mc": cls.MARCHING_CUBES, "marching_cubes": cls.MARCHING_CUBES, "marchingcubes": cls.MARCHING_CUBES,
            "poisson": cls.POISSON,
            "bpa": cls.BALL_PIVOTING, "ball_pivoting": cls.BALL_PIVOTING, "ballpivoting": cls.BALL_PIVOTING,
        }
        try:
            return aliases[token.strip().lower().replace("-", "_")]
        except KeyError:
            raise ValueError(f"unknown reconstruction algorithm {token!r}") from None


# exhaustive parameter lists, in search order
ALPHA_VALUES = (
    0.001, 0.005, 0.01, 0.05, 0.075, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1, 1.25, 1.5,
    1.75, 2, 3, 4, 5, 7.5, 10, 15, 20, 25, 50, 100, 1000,
)
MC_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 31)) + tuple(float(i) for i in range(4, 16))
POISSON_DEPTHS = tuple(range(MIN_DEPTH, MAX_DEPTH + 1))
BPA_RADII = (
    (0.05, 0.1, 0.2, 0.4), (0.1, 0.2, 0.4, 0.8), (0.152, 0.3, 0.61, 1.2), (0.2, 0.4, 0.8, 1.6),
    (0.25, 0.5, 1.0, 2.0), (0.3, 0.6, 1.2, 2.4), (0.35, 0.7, 1.4, 2.8), (0.4, 0.8, 1.6, 3.2),
    (0.45, 0.9, 1.8, 3.6), (0.5, 1.0, 2.0, 4.0),
)
DEFAULT_GRID = {
    Algorithm.ALPHA: ALPHA_VALUES,
    Algorithm.MARCHING_CUBES: MC_THRESHOLDS,
    Algorithm.POISSON: POISSON_DEPTHS,
    Algorithm.BALL_PIVOTING: BPA_RADII,
}


@dataclass(frozen=True)
class ReconstructionParams:
    """One algorithm and its single swept parameter.

    ``value`` is alpha (cm), the marching-cubes density threshold, the
    Poisson depth, or a tuple of four ascending ball radii (cm).
    """

    algorithm: Algorithm
    value: object

    def __post_init__(self):
        alg = Algorithm(self.algorithm)
        object.__setattr__(self, "algorithm", alg)
        v = self.value
        if alg is Algorithm.ALPHA or alg is Algorithm.MARCHING_CUBES:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ValueError(f"{alg.value} parameter must be a positive number, got {v!r}")
            object.__setattr__(self, "value", float(v))
        elif alg is Algorithm.POISSON:
            if int(v) != v or not MIN_DEPTH <= int(v) <= MAX_DEPTH:
                raise ValueError(f"poisson depth must be an integer in [{MIN_DEPTH}, {MAX_DEPTH}], got {v!r}")
            object.__setattr__(self, "value", int(v))
        else:
            r = validate_radii(v)
            if len(r) != 4:
                raise ValueError(f"ball pivoting takes 4 radii, got {len(r)}")
            object.__setattr__(self, "value", r)

    @property
    def label(self) -> str:
        if self.algorithm is Algorithm.BALL_PIVOTING:
            return "[" + ",".join(f"{x:g}" for x in self.value) + "]"
        return f"{self.value:g}"


@dataclass(frozen=True)
class ReconstructionConfig:
    mc_grid_resolution: int = 128
    mc_padding: int = 2
    poisson_grid_cap: int = 256
    poisson_cg_tol: float = 1e-6
    poisson_cg_max_iter: int = 200
    normals_k: int = 10
    seed: int = 0


def reconstruct(
    cloud: PointCloud,
    params: ReconstructionParams,
    config: ReconstructionConfig = ReconstructionConfig(),
    cameras: Optional[CameraPoses] = None,
) -> TriangleMesh:
    """Run one reconstruction; normals are estimated if the method needs them."""
    alg = params.algorithm
    if alg is Algorithm.ALPHA:
        return alpha_shape(cloud, params.value, seed=config.seed)
    if alg is Algorithm.MARCHING_CUBES:
        return marching_cubes_reconstruct(cloud, params.value, config.mc_grid_resolution, config.mc_padding)
    if cloud.normals is None:
        cloud = estimate_normals(cloud, config.normals_k, cameras)
    if alg is Algorithm.POISSON:
        return poisson_reconstruct(
            cloud, params.value, config.poisson_grid_cap, config.poisson_cg_tol, config.poisson_cg_max_iter
        )
    return ball_pivot(cloud, params.value)


__all__ = [
    "ALPHA_VALUES", "BPA_RADII", "DEFAULT_GRID", "MC_THRESHOLDS", "POISSON_DEPTHS",
    "Algorithm", "AlphaComplex", "DegenerateInputError", "DensityGrid", "InsufficientPointsError",
    "ReconstructionConfig", "ReconstructionParams", "SolverError",
    "alpha_shape", "ball_pivot", "delaunay3d", "estimate_normals", "marching_cubes",
    "marching_cubes_field", "marching_cubes_reconstruct", "poisson_reconstruct", "reconstruct",
    "splat_density",
]
