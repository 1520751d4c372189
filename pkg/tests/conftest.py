"""Shared geometry fixtures and helpers."""

import sys

import numpy as np
import pytest

from leafarea.core import TriangleMesh


def unit_cube(origin=(0.0, 0.0, 0.0), size=1.0) -> TriangleMesh:
    """Axis-aligned cube with outward-wound triangles."""
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    v = v * size + np.asarray(origin, dtype=float)
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, tris)


def merge_meshes(*meshes) -> TriangleMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(tris))


def icosphere(radius=1.0, subdivisions=3) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11),
         (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache, nf = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriangleMesh(np.array(verts) * radius, np.array(f))


def sphere_points(n, radius=1.0, seed=0):
    """Fibonacci-lattice points on a sphere (near-uniform, deterministic)."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    p = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    return radius * p


def rotation_z(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def cube():
    return unit_cube()


# ------------------------------------------------------------------ small synthetic study


@pytest.fixture(scope="session")
def small_study(tmp_path_factory):
    """8 plants x 3 layers with alpha-shape features at two alphas."""
    from leafarea.config import load_config
    from leafarea.harness import SweepGrid, compute_features
    from leafarea.synth import generate_dataset

    out = tmp_path_factory.mktemp("study")
    ds = generate_dataset(out, n_plants=8, layers=3, seed=1)
    cfg = load_config(overrides={"search.n_iter": 3, "search.k_folds": 3, "selection.boruta_n_iter": 8})
    grid = SweepGrid({"alpha": (1.0, 3.0)})
    stages = compute_features(out / "dataset", ds, grid.params(), cfg)
    return {"root": out / "dataset", "dataset": ds, "cfg": cfg, "grid": grid, "stages": stages}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.summary_lines():
            terminalreporter.write_line(line)
