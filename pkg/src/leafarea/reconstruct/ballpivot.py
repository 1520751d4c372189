"""Ball-pivoting surface reconstruction.

A ball of radius r is seeded on a triangle whose circumscribed ball holds no
other point, then pivoted around every front edge until it touches a new
point. Radii are processed in ascending order; front edges left over from
a smaller ball are re-pivoted with the next one before new seeds are sought.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from ..core import PointCloud, TriangleMesh

_EMPTY_TOL = 1e-7  # relative slack for points lying on the ball surface


def validate_radii(radii) -> tuple:
    r = tuple(float(x) for x in radii)
    if not r:
        raise ValueError("at least one ball radius is required")
    if any(not x > 0 for x in r):
        raise ValueError(f"ball radii must be positive, got {r}")
    if any(b <= a for a, b in zip(r, r[1:])):
        raise ValueError(f"ball radii must be strictly ascending, got {r}")
    return r


def _ball_center(pa, pb, pc, r):
    """Center of the radius-r ball through three points on the side of the
    normal (b - a) x (c - a); None if the points are too far apart."""
    ab = pb - pa
    ac = pc - pa
    n = np.cross(ab, ac)
    nn = n @ n
    if nn <= 1e-30:
        return None
    cc = pa + (np.cross(n, ab) * (ac @ ac) + np.cross(ac, n) * (ab @ ab)) / (2.0 * nn)
    rho2 = float((cc - pa) @ (cc - pa))
    h2 = r * r - rho2
    if h2 < -1e-12 * r * r:
        return None
    return cc + np.sqrt(max(h2, 0.0)) * n / np.sqrt(nn)


def _ball_centers(pa, pb, pc, r):
    """Vectorized ``_ball_center``; inputs broadcast row-wise. Returns (centers, valid)."""
    pa, pb, pc = np.broadcast_arrays(np.atleast_2d(pa), np.atleast_2d(pb), np.atleast_2d(pc))
    ab = pb - pa
    ac = pc - pa
    n = np.cross(ab, ac)
    nn = np.einsum("ij,ij->i", n, n)
    valid = nn > 1e-30
    safe = np.where(valid, nn, 1.0)
    cc = pa + (np.cross(n, ab) * np.einsum("ij,ij->i", ac, ac)[:, None]
               + np.cross(ac, n) * np.einsum("ij,ij->i", ab, ab)[:, None]) / (2.0 * safe[:, None])
    h2 = r * r - np.einsum("ij,ij->i", cc - pa, cc - pa)
    valid &= h2 >= -1e-12 * r * r
    return cc + (np.sqrt(np.maximum(h2, 0.0)) / np.sqrt(safe))[:, None] * n, valid


class _Pivoter:
    def __init__(self, points, normals):
        self.p = points
        self.n = normals
        self.tree = cKDTree(points)
        self.used = np.zeros(len(points), dtype=bool)
        self.open_edges = np.zeros(len(points), dtype=np.int64)  # incident edges with one triangle
        self.edge_tris = {}  # undirected edge -> number of triangles
        self.directed = set()  # directed edges present in the mesh
        self.triangles = []
        self.front = deque()  # (i, j, opposite, center)
        self.boundary = []  # edges that failed to pivot at the current radius

    def _empty(self, center, r, exclude):
        near = self.tree.query_ball_point(center, r * (1.0 - _EMPTY_TOL))
        return all(q in exclude for q in near)

    def _normal_ok(self, i, j, k):
        p = self.p
        tn = np.cross(p[j] - p[i], p[k] - p[i])
        return tn @ (self.n[i] + self.n[j] + self.n[k]) > 0

    def _can_add(self, i, j, k):
        for a, b in ((i, j), (j, k), (k, i)):
            if (a, b) in self.directed:
                return False
            if self.edge_tris.get((min(a, b), max(a, b)), 0) >= 2:
                return False
        return True

    def _add(self, i, j, k, center):
        self.triangles.append((i, j, k))
        for a, b in ((i, j), (j, k), (k, i)):
            self.directed.add((a, b))
            key = (min(a, b), max(a, b))
            cnt = self.edge_tris.get(key, 0) + 1
            self.edge_tris[key] = cnt
            delta = 1 if cnt == 1 else (-1 if cnt == 2 else 0)
            self.open_edges[a] += delta
            self.open_edges[b] += delta
        self.used[[i, j, k]] = True
        # every edge of the new triangle may now be pivoted across
        for a, b, o in ((i, j, k), (j, k, i), (k, i, j)):
            if self.edge_tris[(min(a, b), max(a, b))] == 1:
                self.front.append((a, b, o, center))

    def find_seed(self, r, start):
        p = self.p
        nrm = self.n
        n = len(p)
        for i in range(start, n):
            if self.used[i]:
                continue
            local = np.asarray(self.tree.query_ball_point(p[i], 2.0 * r * (1.0 + 1e-9)), dtype=np.int64)
            nb = local[(local != i) & ~self.used[local]]
            if len(nb) < 2:
                continue
            d2 = np.sum((p[nb] - p[i]) ** 2, axis=1)
            nb = nb[np.lexsort((nb, d2))][:24]
            ia, ib = np.triu_indices(len(nb), 1)
            J, K = nb[ia], nb[ib]
            tn = np.cross(p[J] - p[i], p[K] - p[i])
            # orient each candidate so its normal agrees with the summed point normals
            flip = np.einsum("ij,ij->i", tn, nrm[i] + nrm[J] + nrm[K]) <= 0
            J, K = np.where(flip, K, J), np.where(flip, J, K)
            tn = np.where(flip[:, None], -tn, tn)
            ok = np.einsum("ij,ij->i", tn, nrm[i] + nrm[J] + nrm[K]) > 0
            # all three point normals must face the triangle's front side
            ok &= (tn @ nrm[i] > 0) & (np.einsum("ij,ij->i", tn, nrm[J]) > 0)
            ok &= np.einsum("ij,ij->i", tn, nrm[K]) > 0
            if not ok.any():
                continue
            C, valid = _ball_centers(p[i], p[J], p[K], r)
            ok &= valid
            idx = np.flatnonzero(ok)
            if len(idx) == 0:
                continue
            # emptiness against every point that could lie inside any candidate ball
            dl = np.sum((C[idx, None, :] - p[local][None, :, :]) ** 2, axis=2)
            inside = dl <= (r * (1.0 - _EMPTY_TOL)) ** 2
            inside &= (local[None, :] != i) & (local[None, :] != J[idx, None]) & (local[None, :] != K[idx, None])
            for t in idx[~inside.any(axis=1)]:
                j, k = int(J[t]), int(K[t])
                if not self._can_add(i, j, k):
                    continue
                self._add(i, j, k, C[t])
                return i
        return None

    def pivot(self, i, j, o, center, r):
        """Rotate the ball about edge i->j away from o; return (k, new center)."""
        p = self.p
        m = 0.5 * (p[i] + p[j])
        e = p[j] - p[i]
        e /= np.linalg.norm(e)
        u = center - m
        u -= (u @ e) * e
        un = np.linalg.norm(u)
        if un <= 1e-15:
            return None
        u /= un
        w = np.cross(e, u)
        # rotating about +e carries the ball away from o
        edge_len = np.linalg.norm(p[j] - p[i])
        reach = np.sqrt(max(r * r - 0.25 * edge_len ** 2, 0.0)) + r
        K = np.asarray(self.tree.query_ball_point(m, reach), dtype=np.int64)
        K = K[(K != i) & (K != j) & (K != o)]
        if len(K) == 0:
            return None
        C, valid = _ball_centers(p[j], p[i], p[K], r)
        if not valid.any():
            return None
        K, C = K[valid], C[valid]
        v = C - m
        v -= np.outer(v @ e, e)
        theta = np.arctan2(v @ w, v @ u)
        theta = np.where(theta < 0, theta + 2.0 * np.pi, theta)
        theta = np.where(theta > 2.0 * np.pi - 1e-9, 0.0, theta)
        dist = np.sum((p[K] - m) ** 2, axis=1)
        t = np.lexsort((K, dist, theta))[0]
        k, c = int(K[t]), C[t]
        if not self._empty(c, r, {i, j, k}):
            return None
        return k, c

    def expand(self, r):
        while self.front:
            i, j, o, center = self.front.popleft()
            if self.edge_tris.get((min(i, j), max(i, j)), 0) != 1:
                continue
            if (j, i) in self.directed:
                continue
            found = self.pivot(i, j, o, center, r)
            if found is None:
                self.boundary.append((i, j, o))
                continue
            k, c = found
            # new triangle (j, i, k) shares edge i-j with reversed direction
            if self.used[k] and self.open_edges[k] == 0:
                self.boundary.append((i, j, o))
                continue
            if not self._can_add(j, i, k) or not self._normal_ok(j, i, k):
                self.boundary.append((i, j, o))
                continue
            self._add(j, i, k, c)

    def run(self, radii):
        for r in radii:
            pending, self.boundary = self.boundary, []
            for i, j, o in pending:
                if self.edge_tris.get((min(i, j), max(i, j)), 0) != 1:
                    continue
                c = _ball_center(self.p[i], self.p[j], self.p[o], r)
                if c is not None:
                    self.front.append((i, j, o, c))
                else:
                    self.boundary.append((i, j, o))
            self.expand(r)
            start = 0
            while True:
                seed = self.find_seed(r, start)
                if seed is None:
                    break
                start = seed
                self.expand(r)
        return self.triangles


def ball_pivot(cloud: PointCloud, radii) -> TriangleMesh:
    """Mesh an oriented cloud by pivoting balls of the given ascending radii.

    Returns an empty mesh when no seed triangle exists for any radius.
    """
    if cloud.normals is None:
        raise ValueError("ball pivoting needs per-point normals")
    radii = validate_radii(radii)
    if len(cloud) < 3:
        return TriangleMesh.empty()
    piv = _Pivoter(cloud.points, cloud.normals)
    tris = piv.run(radii)
    if not tris:
        return TriangleMesh.empty()
    return TriangleMesh(cloud.points, np.array(tris, dtype=np.int64)).compact()
