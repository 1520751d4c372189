from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..core import CameraPoses, LeafAreaError, PointCloud


class InsufficientPointsError(LeafAreaError, ValueError):
    pass


def estimate_normals(cloud: PointCloud, k: int = 10, cameras: Optional[CameraPoses] = None) -> PointCloud:
    """PCA normals from the k nearest neighbors (the point itself included).

    Orientation: toward the nearest camera when poses are given, otherwise
    away from the cloud centroid.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("k must be at least 3")
    if n < k:
        raise InsufficientPointsError(f"cloud has {n} points, fewer than k = {k}")
    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    d = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", d, d)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    if cameras is not None and len(cameras):
        _, ci = cKDTree(cameras.positions).query(pts)
        toward = cameras.positions[ci] - pts
    else:
        toward = pts - pts.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, toward) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)
