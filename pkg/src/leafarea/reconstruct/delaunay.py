"""3D Delaunay tetrahedralization (Qhull) with a deterministic jitter fallback."""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay, QhullError

from ..core import LeafAreaError


class DegenerateInputError(LeafAreaError, ValueError):
    pass


def tetra_volumes(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes of tetrahedra."""
    a, b, c, d = (points[tets[:, i]] for i in range(4))
    return np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a)) / 6.0


def circumspheres(points: np.ndarray, tets: np.ndarray):
    """Circumcenters and circumradii of tetrahedra (inf for flat ones)."""
    a = points[tets[:, 0]]
    e = points[tets[:, 1:]] - a[:, None, :]  # (m, 3, 3) edge vectors as rows
    rhs = 0.5 * np.einsum("mij,mij->mi", e, e)
    det = np.linalg.det(e)
    center = np.full_like(a, np.nan)
    radius = np.full(len(a), np.inf)
    scale = np.einsum("mij,mij->m", e, e) ** 1.5
    ok = np.abs(det) > 1e-14 * np.maximum(scale, np.finfo(float).tiny)
    if ok.any():
        rel = np.linalg.solve(e[ok], rhs[ok][..., None])[..., 0]
        center[ok] = a[ok] + rel
        radius[ok] = np.linalg.norm(rel, axis=1)
    return center, radius


def _check_input(pts: np.ndarray):
    if len(pts) < 4:
        raise DegenerateInputError(f"need at least 4 points, got {len(pts)}")
    d = pts - pts.mean(axis=0)
    sv = np.linalg.svd(d, compute_uv=False)
    if sv[2] <= 1e-12 * max(sv[0], np.finfo(float).tiny):
        raise DegenerateInputError("points are coplanar (or collinear)")


def delaunay3d(points, seed: int = 0) -> np.ndarray:
    """Delaunay tetrahedra of a 3D point set as an (m, 4) index array.

    Every tetrahedron is positively oriented. When Qhull reports points it
    could not place, or leaves flat tetrahedra, the input is re-triangulated
    after a seeded jitter of 1e-9 x bounding-box diagonal; indices still
    refer to the original points.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _check_input(pts)
    diag = float(np.linalg.norm(np.ptp(pts, axis=0)))
    work = pts
    for attempt in range(4):
        try:
            tri = Delaunay(work, qhull_options="Qbb Qc Qz Q12")
        except QhullError as exc:
            raise DegenerateInputError(f"qhull failed: {exc}") from None
        tets = tri.simplices.astype(np.int64)
        vol = tetra_volumes(work, tets)
        flat = np.abs(vol) <= 1e-12 * diag ** 3
        if len(tri.coplanar) == 0 and not flat.any():
            break
        rng = np.random.default_rng([seed, attempt])
        work = pts + rng.uniform(-1.0, 1.0, pts.shape) * 1e-9 * diag * (10 ** attempt)
    tets = tets[~flat]
    vol = vol[~flat]
    neg = vol < 0
    tets[neg] = tets[neg][:, [1, 0, 2, 3]]
    return tets
