"""Marching cubes over a regular scalar grid.

The 256-entry triangle table is built at import time by tracing, for every
corner configuration, the boundary of the above-iso region across the six
cube faces. Ambiguous faces (diagonal sign pattern) always separate the
above-iso corners. Since that rule depends only on a face's four corner
values, neighboring cubes agree on every shared face and the extracted
surface is closed and edge-manifold away from the grid border.
"""

from __future__ import annotations

import functools

import numpy as np

from ..core import TriangleMesh

# corner k sits at (x, y, z) = CORNERS[k]
CORNERS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    dtype=np.int64,
)
EDGES = np.array(
    [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)],
    dtype=np.int64,
)


def _faces():
    """Corner cycles of the six faces, counter-clockwise seen from outside."""
    faces = []
    for axis in range(3):
        for side in (0, 1):
            ids = [k for k in range(8) if CORNERS[k, axis] == side]
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            pts = CORNERS[ids].astype(float)
            center = pts.mean(0)
            u = np.zeros(3)
            u[(axis + 1) % 3] = 1.0
            v = np.cross(normal, u)
            ang = np.arctan2((pts - center) @ v, (pts - center) @ u)
            faces.append([ids[i] for i in np.argsort(ang)])
    return faces


def _edge_id(a, b):
    for i, (p, q) in enumerate(EDGES):
        if {p, q} == {a, b}:
            return i
    raise KeyError((a, b))


def _triangulate(loop, face_edges):
    """Triangulate a polygon of edge ids without any diagonal whose two ends
    lie on one cube face (such a diagonal could be duplicated by the
    neighboring cube). Returns None when no such triangulation exists."""
    n = len(loop)

    def shares_face(a, b):
        return any(a in f and b in f for f in face_edges)

    def ok(i, j):
        return j - i == 1 or (i == 0 and j == n - 1) or not shares_face(loop[i], loop[j])

    @functools.lru_cache(maxsize=None)
    def rec(i, j):
        if j - i < 2:
            return ()
        for k in range(i + 1, j):
            if ok(i, k) and ok(k, j):
                left, right = rec(i, k), rec(k, j)
                if left is not None and right is not None:
                    return left + right + ((loop[i], loop[k], loop[j]),)
        return None

    out = rec(0, n - 1)
    return None if out is None else list(out)


def _build_table():
    faces = _faces()
    face_edges = [
        {_edge_id(cyc[i], cyc[(i + 1) % 4]) for i in range(4)} for cyc in faces
    ]
    table = []
    for config in range(256):
        inside = [(config >> k) & 1 for k in range(8)]
        nxt = {}
        for cyc in faces:
            exits, entries = [], []
            for i in range(4):
                a, b = cyc[i], cyc[(i + 1) % 4]
                if inside[a] and not inside[b]:
                    exits.append(i)
                elif not inside[a] and inside[b]:
                    entries.append(i)
            for i in exits:
                # pair with the nearest entry walking backward along the cycle
                j = min(entries, key=lambda e: (i - e) % 4)
                ea = _edge_id(cyc[i], cyc[(i + 1) % 4])
                eb = _edge_id(cyc[j], cyc[(j + 1) % 4])
                nxt[ea] = eb
        loops = []
        seen = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                seen.add(cur)
                cur = nxt[cur]
            loops.append(loop)
        tris = []
        for loop in loops:
            # traced loops wind around the above-iso corners; reverse so normals
            # point toward decreasing values
            loop = loop[::-1]
            inner = _triangulate(loop, face_edges)
            if inner is None:
                raise RuntimeError(f"no face-safe triangulation for configuration {config}")
            tris.extend(inner)
        table.append(tris)
    width = max(len(t) for t in table)
    arr = np.full((256, width, 3), -1, dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for c, tris in enumerate(table):
        counts[c] = len(tris)
        if tris:
            arr[c, : len(tris)] = tris
    return arr, counts


TRI_TABLE, TRI_COUNT = _build_table()


def marching_cubes(values: np.ndarray, iso: float, origin=(0.0, 0.0, 0.0), spacing=1.0) -> TriangleMesh:
    """Extract the ``iso`` level set of a 3D array sampled at grid nodes.

    Nodes with ``value >= iso`` count as inside. Vertex positions are
    ``origin + spacing * (index + t * axis)`` with linear interpolation along
    each crossed grid edge; vertices are shared per grid edge, so the mesh is
    welded by construction.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 2:
        raise ValueError(f"need a 3D grid with at least 2 nodes per axis, got {v.shape}")
    nx, ny, nz = v.shape
    inside = v >= iso
    cidx = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for k, (dx, dy, dz) in enumerate(CORNERS):
        cidx |= inside[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << k
    active = np.flatnonzero((cidx != 0) & (cidx != 255))
    if len(active) == 0:
        return TriangleMesh.empty()
    conf = cidx.ravel()[active]
    ci, cj, ck = np.unravel_index(active, cidx.shape)

    counts = TRI_COUNT[conf]
    cube_of = np.repeat(np.arange(len(active)), counts)
    slot = np.arange(len(cube_of)) - np.repeat(np.cumsum(counts) - counts, counts)
    local = TRI_TABLE[conf[cube_of], slot]  # (m, 3) local edge ids

    # global edge id: axis * N + ravel(start node)
    start = CORNERS[EDGES[:, 0]]
    end = CORNERS[EDGES[:, 1]]
    lo = np.minimum(start, end)
    axis = np.argmax(np.abs(end - start), axis=1)
    n_nodes = nx * ny * nz
    gi = ci[cube_of][:, None] + lo[local, 0]
    gj = cj[cube_of][:, None] + lo[local, 1]
    gk = ck[cube_of][:, None] + lo[local, 2]
    gid = axis[local] * n_nodes + (gi * ny + gj) * nz + gk

    uniq, inv = np.unique(gid.ravel(), return_inverse=True)
    ax = uniq // n_nodes
    node = uniq % n_nodes
    i0, j0, k0 = np.unravel_index(node, v.shape)
    step = np.eye(3, dtype=np.int64)[ax]
    i1, j1, k1 = i0 + step[:, 0], j0 + step[:, 1], k0 + step[:, 2]
    v0 = v[i0, j0, k0]
    v1 = v[i1, j1, k1]
    t = (iso - v0) / (v1 - v0)
    pos = np.column_stack([i0, j0, k0]).astype(np.float64) + t[:, None] * step
    verts = np.asarray(origin, dtype=np.float64) + spacing * pos
    tris = inv.reshape(-1, 3)
    return TriangleMesh(verts, tris)
