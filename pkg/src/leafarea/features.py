"""Geometric mesh features used as regression inputs."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from .core import MeshFeatures, TriangleMesh


def _corners(mesh: TriangleMesh):
    v = mesh.vertices
    t = mesh.triangles
    return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


def surface_area(mesh: TriangleMesh) -> float:
    if mesh.is_empty:
        return 0.0
    a, b, c = _corners(mesh)
    return float(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())


def enclosed_volume(mesh: TriangleMesh, return_flag: bool = False):
    """Absolute signed volume, summed over triangles relative to the vertex centroid.

    Exact for closed, consistently oriented meshes. For open meshes the value
    is a quasi-volume and the returned flag (when requested) is False.
    """
    if mesh.is_empty:
        return (0.0, False) if return_flag else 0.0
    a, b, c = _corners(mesh)
    o = mesh.vertices.mean(axis=0)
    a, b, c = a - o, b - o, c - o
    vol = abs(float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum()) / 6.0)
    if return_flag:
        return vol, mesh.is_watertight()
    return vol


def _component_labels(mesh: TriangleMesh):
    """Component label per triangle; triangles sharing a vertex are connected."""
    t = mesh.triangles
    nv = len(mesh.vertices)
    m = len(t)
    # bipartite graph: triangle nodes [0, m), vertex nodes [m, m + nv)
    rows = np.repeat(np.arange(m), 3)
    cols = m + t.ravel()
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m + nv, m + nv))
    _, labels = _cc(g, directed=False)
    tri_lab = labels[:m]
    # renumber by first appearance so component order is stable
    _, first = np.unique(tri_lab, return_index=True)
    order = np.argsort(first)
    remap = np.empty(len(first), dtype=np.int64)
    remap[order] = np.arange(len(first))
    _, inv = np.unique(tri_lab, return_inverse=True)
    return remap[inv.ravel()], len(first)


def connected_components(mesh: TriangleMesh, return_meshes: bool = False):
    if mesh.is_empty:
        return (0, []) if return_meshes else 0
    labels, n = _component_labels(mesh)
    if not return_meshes:
        return n
    parts = [TriangleMesh(mesh.vertices, mesh.triangles[labels == k]).compact() for k in range(n)]
    return n, parts


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices by the monotone chain; collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(points2d) -> tuple:
    """(length, width, area) of the minimum-area enclosing rectangle.

    One side of the optimal rectangle is collinear with a hull edge, so each
    hull edge direction is tried in turn (the calipers' candidate set).
    """
    hull = convex_hull_2d(points2d)
    if len(hull) == 0:
        return 0.0, 0.0, 0.0
    if len(hull) == 1:
        return 0.0, 0.0, 0.0
    if len(hull) == 2:
        return float(np.linalg.norm(hull[1] - hull[0])), 0.0, 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    u = edges / np.linalg.norm(edges, axis=1, keepdims=True)
    w = np.stack([-u[:, 1], u[:, 0]], axis=1)
    pu = hull @ u.T  # (h, e)
    pw = hull @ w.T
    ext_u = pu.max(0) - pu.min(0)
    ext_w = pw.max(0) - pw.min(0)
    area = ext_u * ext_w
    k = int(np.argmin(area))
    a, b = float(ext_u[k]), float(ext_w[k])
    length, width = max(a, b), min(a, b)
    return length, width, length * width


def min_rect_xy(mesh: TriangleMesh) -> tuple:
    """Minimal XY rectangle of the mesh vertices as (length, width, area)."""
    if len(mesh.vertices) == 0:
        return 0.0, 0.0, 0.0
    return min_area_rect(mesh.vertices[:, :2])


def extract_features(mesh: TriangleMesh, axis_extent: bool = False) -> MeshFeatures:
    """The nine mesh features.

    With ``axis_extent`` the length and width are the raw X and Y extents and
    the footprint is the axis-aligned XY box, instead of the minimal rectangle.
    """
    if mesh.is_empty:
        return MeshFeatures.zeros()
    v = mesh.vertices
    flags = []
    height = float(v[:, 2].max() - v[:, 2].min())
    if axis_extent:
        length = float(v[:, 0].max() - v[:, 0].min())
        width = float(v[:, 1].max() - v[:, 1].min())
        bbox_area = length * width
    else:
        length, width, bbox_area = min_rect_xy(mesh)
    if width > 0:
        aspect = length / width
    else:
        aspect = 0.0
        flags.append("degenerate_width")
    volume, closed = enclosed_volume(mesh, return_flag=True)
    if not closed:
        flags.append("quasi_volume")
    return MeshFeatures(
        height=height,
        length=length,
        width=width,
        aspect_ratio=aspect,
        volume=volume,
        surface_area=surface_area(mesh),
        bbox_area=bbox_area,
        bbox_volume=bbox_area * height,
        n_components=connected_components(mesh),
        flags=tuple(flags),
    )
