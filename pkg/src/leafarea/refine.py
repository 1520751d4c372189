"""Point-cloud refinement: crop, DBSCAN denoise, green-index split, pot scaling.

The stages run in that order; only canopy points go on to reconstruction and
the pot points serve as the scale/orientation reference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import CameraPoses, LeafAreaError, PointCloud

log = logging.getLogger(__name__)


class RefineError(LeafAreaError):
    """Base class for refinement failures; ``stage`` names the failing step."""

    stage = "refine"


class MissingReferenceError(RefineError):
    stage = "crop"


class EmptyCropError(RefineError):
    stage = "crop"


class DbscanError(RefineError):
    stage = "dbscan"


class MissingColorError(RefineError):
    stage = "color"


class DegenerateFitError(RefineError):
    stage = "pot"


class InvalidReferenceError(RefineError):
    stage = "pot"


@dataclass(frozen=True)
class ColorFilterParams:
    canopy_min_ig: float = -0.02
    pot_max_ig: float = -0.25

    def __post_init__(self):
        if not self.pot_max_ig < self.canopy_min_ig:
            raise ValueError("pot_max_ig must be below canopy_min_ig")


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.01  # fraction of the bounding-box diagonal
    min_samples: int = 10

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    offset: float

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset


@dataclass(frozen=True)
class PotReference:
    plane: Plane
    circle_center: np.ndarray
    measured_radius: float
    known_diameter: float = 15.0


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R @ p + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation must have determinant +1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return self.scale * p @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(float(d["scale"]), np.array(d["rotation"]), np.array(d["translation"]))


# cropping -------------------------------------------------------------------

def crop_to_cube(cloud: PointCloud, cameras: CameraPoses, side_factor: float = 1.0) -> PointCloud:
    """Keep points inside an axis-aligned cube around the camera centroid.

    The cube side is ``side_factor`` times the median camera distance from
    that centroid, i.e. roughly the orbit radius of the capture.
    """
    if cameras is None or len(cameras) == 0:
        raise MissingReferenceError("no camera positions to center the crop")
    if len(cameras) < 3:
        raise MissingReferenceError(f"need at least 3 camera positions, got {len(cameras)}")
    pos = cameras.positions
    center = pos.mean(axis=0)
    side = side_factor * float(np.median(np.linalg.norm(pos - center, axis=1)))
    half = side / 2.0
    inside = np.all(np.abs(cloud.points - center) <= half, axis=1)
    if not inside.any():
        raise EmptyCropError(
            f"crop cube (side {side:g}) around {center.round(4).tolist()} contains no points"
        )
    return cloud.subset(inside)


# DBSCAN ---------------------------------------------------------------------

@dataclass(frozen=True)
class DbscanResult:
    labels: np.ndarray  # -1 = noise, clusters numbered by first core point in input order
    cluster_sizes: np.ndarray
    denoised: PointCloud
    largest: PointCloud

    @property
    def all_noise(self) -> bool:
        return len(self.cluster_sizes) == 0


def dbscan_labels(points: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """DBSCAN over absolute ``eps``; neighborhoods include the point itself.

    Clusters are the connected components of core points. A border point joins
    the cluster of its nearest core neighbor, which keeps the partition
    independent of input order. Labels are numbered by first appearance.
    """
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(points)
    counts = np.array([len(nb) for nb in tree.query_ball_point(points, eps)], dtype=np.int64)
    core = counts >= min_samples
    core_idx = np.flatnonzero(core)
    if len(core_idx) == 0:
        return labels
    pairs = cKDTree(points[core_idx]).query_pairs(eps, output_type="ndarray")
    g = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs) else ([], ([], [])),
        shape=(len(core_idx), len(core_idx)),
    )
    _, comp = connected_components(g, directed=False)
    labels[core_idx] = comp
    border = np.flatnonzero(~core)
    if len(border):
        core_tree = cKDTree(points[core_idx])
        for i, nb in zip(border, core_tree.query_ball_point(points[border], eps)):
            if nb:
                nb = np.asarray(nb)
                d = np.linalg.norm(points[core_idx[nb]] - points[i], axis=1)
                # tie-break on coordinates, not on input position
                order = np.lexsort((*points[core_idx[nb]].T[::-1], d))
                labels[i] = comp[nb[order[0]]]
    # renumber by first appearance
    pos = np.flatnonzero(labels >= 0)
    uniq, first = np.unique(labels[pos], return_index=True)
    mapping = np.empty(comp.max() + 1, dtype=np.int64)
    mapping[uniq[np.argsort(first)]] = np.arange(len(uniq))
    out = labels.copy()
    out[pos] = mapping[labels[pos]]
    return out


def dbscan(cloud: PointCloud, params: DbscanParams = DbscanParams()) -> DbscanResult:
    """Density clustering with eps relative to the cloud's bounding-box diagonal."""
    if len(cloud) == 0:
        raise ValueError("dbscan needs a non-empty cloud")
    eps = params.eps * cloud.bbox_diagonal()
    if eps <= 0:
        # all points coincide: one cluster if dense enough
        eps = np.finfo(float).tiny
    labels = dbscan_labels(cloud.points, eps, params.min_samples)
    sizes = np.bincount(labels[labels >= 0]) if (labels >= 0).any() else np.zeros(0, dtype=np.int64)
    if len(sizes) == 0:
        log.warning("dbscan: every point labeled noise")
        return DbscanResult(labels, sizes, cloud.subset(labels >= 0), cloud.subset(labels >= 0))
    largest = int(np.argmax(sizes))
    return DbscanResult(labels, sizes, cloud.subset(labels >= 0), cloud.subset(labels == largest))


# color filter ---------------------------------------------------------------

def green_index(r, g):
    """(G - R) / (R + G); NaN where both bands are zero."""
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    total = r + g
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, (g - r) / np.where(total > 0, total, 1.0), np.nan)
    return out if out.ndim else float(out)


def classify_points(cloud: PointCloud, params: ColorFilterParams = ColorFilterParams()):
    """Split a colored cloud into (canopy, pot, dismissed)."""
    if cloud.colors is None:
        raise MissingColorError("color filter needs a colored cloud")
    ig = green_index(cloud.colors[:, 0], cloud.colors[:, 1])
    ig = np.atleast_1d(ig)
    canopy = ig >= params.canopy_min_ig
    pot = ig <= params.pot_max_ig
    dismissed = ~(canopy | pot)
    return cloud.subset(canopy), cloud.subset(pot), cloud.subset(dismissed)


# pot reference fits ---------------------------------------------------------

def fit_plane_lsq(points) -> Plane:
    """Total-least-squares plane; the normal points into the +Z hemisphere."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) < 3:
        raise DegenerateFitError("plane fit needs at least 3 points")
    c = p.mean(axis=0)
    d = p - c
    cov = d.T @ d / len(p)
    w, v = np.linalg.eigh(cov)
    scale = max(w[-1], np.finfo(float).tiny)
    if w[1] <= 1e-12 * scale:
        raise DegenerateFitError("points are collinear; plane is undetermined")
    n = v[:, 0]
    if n[2] < 0 or (n[2] == 0 and (n[1] < 0 or (n[1] == 0 and n[0] < 0))):
        n = -n
    n = n / np.linalg.norm(n)
    return Plane(n, float(n @ c))


def _plane_basis(normal):
    n = np.asarray(normal, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def fit_circle_on_plane(points, plane: Plane):
    """Kasa linear least-squares circle fit after projecting onto ``plane``.

    Returns (center as a 3-vector lying on the plane, radius).
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) < 3:
        raise DegenerateFitError("circle fit needs at least 3 points")
    u, v = _plane_basis(plane.normal)
    origin = plane.normal * plane.offset
    rel = p - origin
    x, y = rel @ u, rel @ v
    # center the coordinates to keep the normal equations well conditioned
    mx, my = x.mean(), y.mean()
    xs, ys = x - mx, y - my
    A = np.column_stack([xs, ys, np.ones_like(xs)])
    b = xs ** 2 + ys ** 2
    sv = np.linalg.svd(A[:, :2] - A[:, :2].mean(0), compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], np.finfo(float).tiny):
        raise DegenerateFitError("projected points are collinear; circle is undetermined")
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = sol[0] / 2, sol[1] / 2
    r2 = sol[2] + cx ** 2 + cy ** 2
    if r2 <= 0:
        raise DegenerateFitError("circle fit produced a non-positive radius")
    center = origin + (cx + mx) * u + (cy + my) * v
    return center, float(np.sqrt(r2))


def _rotation_to_z(n) -> np.ndarray:
    """Rotation matrix taking unit vector n onto +Z (Rodrigues)."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    z = np.array([0.0, 0.0, 1.0])
    c = float(n @ z)
    axis = np.cross(n, z)
    s = float(np.linalg.norm(axis))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])
    k = axis / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + s * K + (1 - c) * (K @ K)
    # re-orthonormalize to kill rounding
    uu, _, vt = np.linalg.svd(R)
    return uu @ vt


def compute_similarity_transform(pot: PotReference) -> SimilarityTransform:
    """Scale to the known pot diameter, rotate the pot plane normal to +Z and
    move the rim center to the origin."""
    if not pot.measured_radius > 0:
        raise InvalidReferenceError(f"measured pot radius must be positive, got {pot.measured_radius}")
    scale = (pot.known_diameter / 2.0) / pot.measured_radius
    R = _rotation_to_z(pot.plane.normal)
    t = -scale * (R @ np.asarray(pot.circle_center, dtype=float))
    return SimilarityTransform(scale, R, t)


def apply_transform(cloud: PointCloud, t: SimilarityTransform) -> PointCloud:
    pts = t.apply_points(cloud.points)
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ t.rotation.T
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        # renormalize only where rounding drifted, so the identity is exact
        drift = np.abs(norm - 1.0) > 1e-12
        normals = np.where(drift, normals / norm, normals)
    return PointCloud(pts, cloud.colors, normals)


def apply_transform_cameras(cameras: CameraPoses, t: SimilarityTransform) -> CameraPoses:
    return CameraPoses(t.apply_points(cameras.positions))


def pot_reference(pot: PointCloud, canopy: Optional[PointCloud] = None, known_diameter: float = 15.0,
                  rim_quantile: float = 0.98) -> PotReference:
    """Fit the pot plane and rim circle from classified pot points.

    The plane normal is flipped toward the canopy when one is given, and the
    plane is shifted up to the rim level (``rim_quantile`` of the heights
    along the normal) so the rim, not the pot's mid-height, lands on Z = 0.
    """
    if len(pot) < 3:
        raise DegenerateFitError(f"only {len(pot)} pot points; cannot fit the reference")
    plane = fit_plane_lsq(pot.points)
    n = plane.normal
    if canopy is not None and len(canopy):
        if (canopy.points.mean(axis=0) - pot.points.mean(axis=0)) @ n < 0:
            n = -n
    heights = pot.points @ n
    rim = float(np.quantile(heights, rim_quantile))
    plane = Plane(n, rim)
    center, radius = fit_circle_on_plane(pot.points, plane)
    return PotReference(plane, center, radius, known_diameter)


@dataclass(frozen=True)
class RefineResult:
    canopy: PointCloud
    pot: PointCloud
    dismissed: PointCloud
    transform: SimilarityTransform
    cameras: Optional[CameraPoses]
    n_raw: int
    n_cropped: int
    n_denoised: int


def refine_cloud(
    cloud: PointCloud,
    cameras: Optional[CameraPoses],
    side_factor: float = 1.0,
    dbscan_params: DbscanParams = DbscanParams(),
    color: ColorFilterParams = ColorFilterParams(),
    known_diameter: float = 15.0,
) -> RefineResult:
    """Run crop -> DBSCAN -> color filter -> scale/rotate on one raw cloud.

    Errors propagate as RefineError subclasses whose ``stage`` attribute
    names the failing step.
    """
    cropped = crop_to_cube(cloud, cameras, side_factor)
    den = dbscan(cropped, dbscan_params)
    if den.all_noise:
        raise DbscanError("dbscan labeled every point as noise")
    canopy, pot, dismissed = classify_points(den.denoised, color)
    if len(canopy) == 0:
        raise MissingColorError("no canopy points after the color filter")
    ref = pot_reference(pot, canopy, known_diameter)
    t = compute_similarity_transform(ref)
    return RefineResult(
        canopy=apply_transform(canopy, t),
        pot=apply_transform(pot, t),
        dismissed=apply_transform(dismissed, t),
        transform=t,
        cameras=apply_transform_cameras(cameras, t),
        n_raw=len(cloud),
        n_cropped=len(cropped),
        n_denoised=len(den.denoised),
    )
