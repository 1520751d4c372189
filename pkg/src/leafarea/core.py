"""Shared domain types: point clouds, meshes, camera poses and samples."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np


class LeafAreaError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LeafAreaError, ValueError):
    pass


def _as_points(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (n, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """3D points with 8-bit RGB colors and optional unit normals.

    ``colors`` may be None for clouds that never carried color (e.g. test
    geometry); the refinement color filter requires them.
    """

    points: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _as_points(self.points, "points")
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.colors is not None:
            col = np.asarray(self.colors)
            if col.size == 0:
                col = col.reshape(0, 3)
            if col.shape != (n, 3):
                raise ValidationError(f"colors shape {col.shape} does not match {n} points")
            if np.any(col < 0) or np.any(col > 255):
                raise ValidationError("colors must be 8-bit values")
            object.__setattr__(self, "colors", col.astype(np.uint8))
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if len(nrm) != n:
                raise ValidationError(f"normals length {len(nrm)} does not match {n} points")
            if n and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValidationError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)
        for arr in (self.points, self.colors, self.normals):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask) -> "PointCloud":
        """Return the points selected by a boolean mask or index array."""
        return PointCloud(
            self.points[mask],
            None if self.colors is None else self.colors[mask],
            None if self.normals is None else self.normals[mask],
        )

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, self.colors, normals)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            _arr_eq(self.points, other.points)
            and _arr_eq(self.colors, other.colors)
            and _arr_eq(self.normals, other.normals)
        )

    def bbox_diagonal(self) -> float:
        if len(self.points) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(0) - self.points.min(0)))


def _arr_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class CameraPoses:
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _as_points(self.positions, "positions"))

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        return isinstance(other, CameraPoses) and _arr_eq(self.positions, other.positions)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh. Coordinates are in cm once a cloud is scaled."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = _as_points(self.vertices, "vertices")
        t = np.asarray(self.triangles, dtype=np.int64)
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValidationError(f"triangles must have shape (m, 3), got {t.shape}")
        if len(t):
            if t.min() < 0 or t.max() >= len(v):
                raise ValidationError("triangle index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValidationError("degenerate triangle with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        v.setflags(write=False)
        t.setflags(write=False)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return _arr_eq(self.vertices, other.vertices) and _arr_eq(self.triangles, other.triangles)

    def edge_counts(self) -> dict:
        """Map each undirected edge (i < j) to the number of incident triangles."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, counts)}

    def is_watertight(self) -> bool:
        if self.is_empty:
            return False
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def compact(self) -> "TriangleMesh":
        """Drop vertices not referenced by any triangle."""
        if self.is_empty:
            return TriangleMesh.empty()
        used, inv = np.unique(self.triangles, return_inverse=True)
        return TriangleMesh(self.vertices[used], inv.reshape(-1, 3))

    def weld(self, tol: Optional[float] = None) -> "TriangleMesh":
        """Merge vertices closer than ``tol`` (default 1e-6 x bbox diagonal).

        Triangles that collapse are dropped, as are exact duplicates.
        """
        if len(self.vertices) == 0:
            return self
        if tol is None:
            diag = float(np.linalg.norm(np.ptp(self.vertices, axis=0)))
            tol = 1e-6 * diag
        if tol <= 0:
            keys = self.vertices
            _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
            rep = first[inv.ravel()]
        else:
            from scipy.spatial import cKDTree

            tree = cKDTree(self.vertices)
            pairs = tree.query_pairs(tol, output_type="ndarray")
            rep = np.arange(len(self.vertices))
            if len(pairs):
                from scipy.sparse import coo_matrix
                from scipy.sparse.csgraph import connected_components

                n = len(self.vertices)
                g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
                _, labels = connected_components(g, directed=False)
                # representative = lowest index in each cluster
                first = np.full(labels.max() + 1, n)
                np.minimum.at(first, labels, np.arange(n))
                rep = first[labels]
        tri = rep[self.triangles]
        ok = (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])
        tri = tri[ok]
        if len(tri):
            key = np.sort(tri, axis=1)
            _, keep = np.unique(key, axis=0, return_index=True)
            tri = tri[np.sort(keep)]
        return TriangleMesh(self.vertices, tri).compact()


class Cultivar(str, enum.Enum):
    MOHAMED = "Mohamed"
    HAHMS_GELBE = "HahmsGelbe"
    RED_ROBIN = "RedRobin"


class Experiment(int, enum.Enum):
    ONE = 1
    TWO = 2


@dataclass(frozen=True)
class MeshFeatures:
    """The nine geometric mesh parameters used as regression features."""

    height: float
    length: float
    width: float
    aspect_ratio: float
    volume: float
    surface_area: float
    bbox_area: float
    bbox_volume: float
    n_components: int
    flags: tuple = field(default=(), compare=False)

    @classmethod
    def zeros(cls) -> "MeshFeatures":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, flags=("empty",))

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in FEATURE_NAMES}

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)


FEATURE_NAMES = tuple(f.name for f in fields(MeshFeatures) if f.name != "flags")


@dataclass(frozen=True)
class Sample:
    """One "onion" stage of one plant."""

    plant_id: str
    cultivar: Cultivar
    experiment: Experiment
    layer: int
    features: Optional[MeshFeatures]
    tla: float

    def __post_init__(self):
        object.__setattr__(self, "cultivar", Cultivar(self.cultivar))
        object.__setattr__(self, "experiment", Experiment(int(self.experiment)))
        if int(self.layer) != self.layer or self.layer < 0:
            raise ValidationError(f"layer must be a non-negative integer, got {self.layer!r}")
        if not np.isfinite(self.tla) or self.tla <= 0:
            raise ValidationError(f"tla must be positive, got {self.tla!r} for {self.plant_id}")


@dataclass(frozen=True)
class Dataset:
    samples: tuple

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        seen = set()
        for s in samples:
            key = (s.plant_id, s.layer)
            if key in seen:
                raise ValidationError(f"duplicate (plant_id, layer) {key}")
            seen.add(key)
        # peeling only removes leaves, so deeper layers cannot gain area
        by_plant = {}
        for s in samples:
            by_plant.setdefault(s.plant_id, []).append((s.layer, s.tla))
        for pid, rows in by_plant.items():
            rows.sort()
            for (l0, t0), (l1, t1) in zip(rows, rows[1:]):
                if t1 > t0:
                    raise ValidationError(
                        f"plant {pid}: tla rises from layer {l0} ({t0}) to layer {l1} ({t1})"
                    )

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def tla(self) -> np.ndarray:
        return np.array([s.tla for s in self.samples], dtype=np.float64)

    @property
    def experiments(self) -> np.ndarray:
        return np.array([int(s.experiment) for s in self.samples])

    def subset(self, idx) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in idx))

    def feature_matrix(self) -> np.ndarray:
        missing = [s.plant_id for s in self.samples if s.features is None]
        if missing:
            raise ValidationError(f"samples without features: {missing[:5]}")
        return np.array([s.features.as_array() for s in self.samples])
