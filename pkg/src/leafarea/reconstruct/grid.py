"""Voxel density fields and the marching-cubes reconstruction built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import PointCloud, TriangleMesh
from .mcubes import marching_cubes


@dataclass(frozen=True)
class DensityGrid:
    """Scalar values at voxel centers; center (i, j, k) is origin + cell * (i, j, k)."""

    origin: np.ndarray
    cell: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError(f"grid needs >= 2 voxels per axis, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))

    @property
    def dims(self) -> tuple:
        return self.values.shape

    def centers_of(self, idx) -> np.ndarray:
        return self.origin + self.cell * np.asarray(idx, dtype=float)


def grid_frame(points: np.ndarray, resolution: int, padding: int):
    """Origin, cell size and dims of a grid with ``resolution`` voxel centers
    spanning the longest bounding-box axis plus ``padding`` cells per side."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    extent = hi - lo
    longest = float(extent.max())
    cell = longest / (resolution - 1) if longest > 0 else 1.0
    inner = np.floor(extent / cell + 1e-9).astype(np.int64) + 2
    dims = inner + 2 * padding
    origin = lo - padding * cell
    return origin, cell, tuple(int(d) for d in dims)


def trilinear_splat(points: np.ndarray, weights: np.ndarray, origin, cell: float, dims) -> np.ndarray:
    """Distribute each point's weight over the 8 surrounding voxel centers."""
    grid = np.zeros(dims, dtype=np.float64)
    if len(points) == 0:
        return grid
    rel = (points - origin) / cell
    base = np.floor(rel).astype(np.int64)
    base = np.clip(base, 0, np.array(dims) - 2)
    frac = rel - base
    flat = grid.ravel()
    strides = np.array([dims[1] * dims[2], dims[2], 1])
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1 - frac[:, 2]
                idx = (base + (dx, dy, dz)) @ strides
                np.add.at(flat, idx, weights * wx * wy * wz)
    return grid


def trilinear_sample(values: np.ndarray, points: np.ndarray, origin, cell: float) -> np.ndarray:
    dims = np.array(values.shape)
    rel = (points - origin) / cell
    base = np.clip(np.floor(rel).astype(np.int64), 0, dims - 2)
    frac = np.clip(rel - base, 0.0, 1.0)
    out = np.zeros(len(points))
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1 - frac[:, 2]
                out += wx * wy * wz * values[base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz]
    return out


def splat_density(cloud: PointCloud, grid_resolution: int = 128, padding: int = 2) -> DensityGrid:
    """Point-count density: each point spreads weight 1 trilinearly.

    ``grid_resolution`` voxel centers span the longest bounding-box axis;
    ``padding`` empty cells on each side keep every isosurface closed.
    """
    if len(cloud) == 0:
        raise ValueError("cannot splat an empty cloud")
    if grid_resolution < 2:
        raise ValueError(f"grid_resolution must be >= 2, got {grid_resolution}")
    origin, cell, dims = grid_frame(cloud.points, grid_resolution, padding)
    values = trilinear_splat(cloud.points, np.ones(len(cloud)), origin, cell, dims)
    return DensityGrid(origin, cell, values)


def marching_cubes_field(grid: DensityGrid, iso: float) -> TriangleMesh:
    return marching_cubes(grid.values, iso, origin=grid.origin, spacing=grid.cell)


def marching_cubes_reconstruct(cloud: PointCloud, threshold: float, grid_resolution: int = 128,
                               padding: int = 2) -> TriangleMesh:
    if not threshold > 0:
        raise ValueError(f"marching-cubes threshold must be positive, got {threshold}")
    return marching_cubes_field(splat_density(cloud, grid_resolution, padding), threshold)
