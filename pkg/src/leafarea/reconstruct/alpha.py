from __future__ import annotations

import numpy as np

from ..core import PointCloud, TriangleMesh
from .delaunay import circumspheres, delaunay3d

# faces of a positively oriented tetra (a, b, c, d), each wound outward
_TET_FACES = np.array([(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)])


class AlphaComplex:
    """Delaunay tetrahedra and their circumradii for one cloud.

    Building this once lets a parameter sweep extract many alpha shapes
    without re-triangulating.
    """

    def __init__(self, points, seed: int = 0):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.tets = delaunay3d(self.points, seed=seed)
        _, self.radii = circumspheres(self.points, self.tets)

    def kept(self, alpha: float) -> np.ndarray:
        return self.radii <= alpha

    def shape(self, alpha: float) -> TriangleMesh:
        """Boundary of the union of tetrahedra with circumradius <= alpha."""
        keep = self.kept(alpha)
        if not keep.any():
            return TriangleMesh.empty()
        tets = self.tets[keep]
        faces = tets[:, _TET_FACES].reshape(-1, 3)
        key = np.sort(faces, axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        boundary = faces[counts[inv.ravel()] == 1]
        return TriangleMesh(self.points, boundary).compact()


def alpha_shape(cloud: PointCloud, alpha: float, seed: int = 0) -> TriangleMesh:
    """Alpha shape with alpha as a circumradius bound in cloud units (cm)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return AlphaComplex(cloud.points, seed=seed).shape(alpha)
