import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_rotation
from leafarea.core import CameraPoses, PointCloud
from leafarea.refine import (
    ColorFilterParams, DbscanParams, DegenerateFitError, EmptyCropError, InvalidReferenceError,
    MissingColorError, MissingReferenceError, Plane, PotReference, SimilarityTransform, apply_transform,
    classify_points, compute_similarity_transform, crop_to_cube, dbscan, dbscan_labels, fit_circle_on_plane,
    fit_plane_lsq, green_index,
)

# ------------------------------------------------------------------ crop


def _ring(radius, n=12, z=0.0):
    a = np.arange(n) * 2 * np.pi / n
    return np.column_stack([radius * np.cos(a), radius * np.sin(a), np.full(n, z)])


def test_crop_drops_far_point():
    cloud = PointCloud([[0, 0, 0], [100, 0, 0]])
    out = crop_to_cube(cloud, CameraPoses(_ring(10.0)))
    assert out.points.tolist() == [[0.0, 0.0, 0.0]]


def test_crop_huge_factor_is_noop():
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.normal(size=(100, 3)) * 50, rng.integers(0, 256, (100, 3)))
    assert crop_to_cube(cloud, CameraPoses(_ring(10.0)), side_factor=1e6) == cloud


def test_crop_against_membership_oracle():
    corners = np.array([[x, y, z] for x in (-5, 5) for y in (-5, 5) for z in (-5, 5)], float)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-20, 20, (1000, 3))
    out = crop_to_cube(PointCloud(pts), CameraPoses(corners))
    half = 5 * np.sqrt(3) / 2
    expected = pts[np.all(np.abs(pts) <= half, axis=1)]
    assert np.array_equal(out.points, expected)
    # roughly the volume fraction of the cube inside the box
    assert abs(len(expected) / 1000 - (2 * half / 40) ** 3) < 0.01


def test_crop_errors():
    cloud = PointCloud([[0.0, 0.0, 0.0]])
    with pytest.raises(MissingReferenceError) as info:
        crop_to_cube(cloud, CameraPoses(np.zeros((0, 3))))
    assert info.value.stage == "crop"
    with pytest.raises(EmptyCropError):
        crop_to_cube(PointCloud([[500.0, 0, 0]]), CameraPoses(_ring(10.0)))


# ------------------------------------------------------------------ DBSCAN


def brute_dbscan(points, eps, min_samples):
    """Textbook O(n^2) DBSCAN; border points go to their nearest core point."""
    n = len(points)
    d = np.linalg.norm(points[:, None] - points[None], axis=2)
    nb = d <= eps
    core = nb.sum(1) >= min_samples
    labels = np.full(n, -1)
    c = 0
    for i in range(n):
        if not core[i] or labels[i] >= 0:
            continue
        stack = [i]
        labels[i] = c
        while stack:
            j = stack.pop()
            for k in np.flatnonzero(nb[j] & core):
                if labels[k] < 0:
                    labels[k] = c
                    stack.append(k)
        c += 1
    for i in np.flatnonzero(~core):
        cand = np.flatnonzero(nb[i] & core)
        if len(cand):
            key = [(d[i, k], *points[k]) for k in cand]
            labels[i] = labels[cand[min(range(len(cand)), key=lambda t: key[t])]]
    return labels


def partition(labels):
    groups = {}
    for i, l in enumerate(labels):
        if l >= 0:
            groups.setdefault(l, set()).add(i)
    return {frozenset(g) for g in groups.values()}, frozenset(np.flatnonzero(np.asarray(labels) < 0).tolist())


@pytest.mark.parametrize("seed", range(10))
def test_dbscan_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-10, 10, (4, 3))
    pts = np.vstack([c + rng.normal(0, 0.8, (60, 3)) for c in centers] + [rng.uniform(-15, 15, (60, 3))])
    eps, ms = 1.2, 5
    assert partition(dbscan_labels(pts, eps, ms)) == partition(brute_dbscan(pts, eps, ms))


def test_dbscan_two_blobs_and_an_outlier():
    rng = np.random.default_rng(3)
    a = rng.normal(0, 0.1, (50, 3))
    b = rng.normal(0, 0.1, (50, 3)) + [5, 0, 0]
    pts = np.vstack([a, b, [[50.0, 50.0, 50.0]]])
    labels = dbscan_labels(pts, 0.5, 5)
    assert set(labels[:50]) == {0} and set(labels[50:100]) == {1}
    assert labels[100] == -1
    assert partition(labels) == partition(brute_dbscan(pts, 0.5, 5))


def test_dbscan_min_samples_one_has_no_noise():
    pts = np.random.default_rng(4).uniform(0, 100, (80, 3))
    res = dbscan(PointCloud(pts), DbscanParams(eps=0.001, min_samples=1))
    assert np.all(res.labels >= 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dbscan_is_order_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = np.vstack([rng.normal(0, 1, (80, 3)), rng.normal(0, 1, (80, 3)) + 4, rng.uniform(-8, 12, (30, 3))])
    perm = rng.permutation(len(pts))
    a = dbscan_labels(pts, 0.9, 6)
    b = dbscan_labels(pts[perm], 0.9, 6)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    assert partition(a) == partition(b[inv])


def test_dbscan_reports_largest_cluster():
    rng = np.random.default_rng(5)
    pts = np.vstack([rng.normal(0, 0.05, (30, 3)), rng.normal(0, 0.05, (70, 3)) + 3])
    res = dbscan(PointCloud(pts), DbscanParams(eps=0.05, min_samples=4))
    assert sorted(res.cluster_sizes.tolist()) == [30, 70]
    assert len(res.largest) == 70
    assert len(res.denoised) == 100


# ------------------------------------------------------------------ color


def test_green_index_values():
    assert green_index(100, 100) == 0.0
    assert green_index(100, 60) == -0.25
    assert green_index(0, 255) == 1.0
    assert np.isnan(green_index(0, 0))


@given(r=st.integers(0, 255), g=st.integers(0, 255))
def test_green_index_antisymmetry(r, g):
    if r + g == 0:
        return
    assert green_index(r, g) == -green_index(g, r)
    assert -1.0 <= green_index(r, g) <= 1.0


def _colored(rg):
    return PointCloud(np.arange(3.0 * len(rg)).reshape(-1, 3), [[r, g, 0] for r, g in rg])


def test_classify_hand_cases():
    cloud = _colored([(100, 120), (110, 60), (100, 90), (0, 0)])
    canopy, pot, dismissed = classify_points(cloud)
    assert canopy.colors[:, :2].tolist() == [[100, 120]]  # I_g = +0.0909
    assert pot.colors[:, :2].tolist() == [[110, 60]]  # I_g = -0.294
    assert dismissed.colors[:, :2].tolist() == [[100, 90], [0, 0]]  # -0.0526 and undefined


def test_classify_threshold_boundaries_are_inclusive():
    # (49 - 51) / 100 = -0.02 exactly; (60 - 100) / 160 = -0.25 exactly
    canopy, pot, dismissed = classify_points(_colored([(51, 49), (100, 60), (52, 48), (101, 60)]))
    assert canopy.colors[:, :2].tolist() == [[51, 49]]
    assert pot.colors[:, :2].tolist() == [[100, 60], [101, 60]]
    assert dismissed.colors[:, :2].tolist() == [[52, 48]]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_classify_partitions_input(seed):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.normal(size=(200, 3)), rng.integers(0, 256, (200, 3)))
    parts = classify_points(cloud)
    assert sum(len(p) for p in parts) == len(cloud)
    merged = np.vstack([p.points for p in parts])
    assert sorted(map(tuple, merged)) == sorted(map(tuple, cloud.points))


def test_classify_needs_colors():
    with pytest.raises(MissingColorError):
        classify_points(PointCloud(np.zeros((3, 3))))


def test_color_params_order():
    with pytest.raises(ValueError):
        ColorFilterParams(canopy_min_ig=-0.3, pot_max_ig=-0.25)


# ------------------------------------------------------------------ plane/circle fits


def test_plane_on_z5():
    rng = np.random.default_rng(6)
    pts = np.column_stack([rng.uniform(-3, 3, (50, 2)), np.full(50, 5.0)])
    pl = fit_plane_lsq(pts)
    assert np.allclose(pl.normal, [0, 0, 1], atol=1e-12)
    assert pl.offset == pytest.approx(5.0, abs=1e-12)
    assert np.max(np.abs(pl.signed_distance(pts))) < 1e-9


def test_plane_diagonal():
    rng = np.random.default_rng(7)
    uv = rng.normal(size=(40, 2))
    pts = np.column_stack([uv[:, 0], uv[:, 1], -uv[:, 0] - uv[:, 1]])
    pl = fit_plane_lsq(pts)
    assert np.allclose(pl.normal, np.ones(3) / np.sqrt(3), atol=1e-9)


def test_noisy_plane_normal_within_half_degree():
    rng = np.random.default_rng(8)
    R = random_rotation(rng)
    pts = np.column_stack([rng.uniform(-5, 5, (1000, 2)), rng.normal(0, 0.01, 1000)]) @ R.T
    truth = R[:, 2] * np.sign(R[2, 2])
    # oracle: smallest-eigenvalue eigenvector of the covariance
    c = np.cov(pts.T)
    w, v = np.linalg.eigh(c)
    oracle = v[:, 0] * np.sign(v[2, 0])
    n = fit_plane_lsq(pts).normal
    assert np.degrees(np.arccos(min(1.0, abs(n @ truth)))) < 0.5
    assert abs(abs(n @ oracle) - 1) < 1e-12


def test_plane_collinear_rejected():
    with pytest.raises(DegenerateFitError):
        fit_plane_lsq(np.outer(np.arange(5.0), [1, 2, 3]))


def test_circle_exact():
    a = np.linspace(0, 2 * np.pi, 100, endpoint=False)
    pts = np.column_stack([1 + 7.5 * np.cos(a), 2 + 7.5 * np.sin(a), np.zeros(100)])
    c, r = fit_circle_on_plane(pts, Plane(np.array([0.0, 0.0, 1.0]), 0.0))
    assert np.allclose(c, [1, 2, 0], atol=1e-9)
    assert abs(r - 7.5) < 1e-9


def test_circle_three_points():
    pts = np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 0]], float)
    c, r = fit_circle_on_plane(pts, Plane(np.array([0.0, 0.0, 1.0]), 0.0))
    assert np.allclose(c, 0, atol=1e-12) and abs(r - 1) < 1e-12


def test_circle_noisy_radius():
    from scipy.optimize import least_squares

    rng = np.random.default_rng(9)
    a = rng.uniform(0, 2 * np.pi, 400)
    rad = 7.5 + rng.normal(0, 0.05, 400)
    pts = np.column_stack([rad * np.cos(a), rad * np.sin(a), np.zeros(400)])
    _, r = fit_circle_on_plane(pts, Plane(np.array([0.0, 0.0, 1.0]), 0.0))
    sol = least_squares(lambda p: np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1]) - p[2], [0.1, 0.1, 7.0])
    assert abs(r - 7.5) / 7.5 < 0.01
    assert abs(r - sol.x[2]) / sol.x[2] < 0.01


def test_circle_collinear_rejected():
    pts = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
    with pytest.raises(DegenerateFitError):
        fit_circle_on_plane(pts, Plane(np.array([0.0, 0.0, 1.0]), 0.0))


# ------------------------------------------------------------------ transforms


def test_scale_from_known_diameter():
    ref = PotReference(Plane(np.array([0.0, 0.0, 1.0]), 0.0), np.zeros(3), 0.05, 15.0)
    t = compute_similarity_transform(ref)
    assert abs(t.scale - 150.0) < 1e-9


def test_identity_when_already_aligned():
    ref = PotReference(Plane(np.array([0.0, 0.0, 1.0]), 0.0), np.zeros(3), 7.5, 15.0)
    t = compute_similarity_transform(ref)
    assert t.scale == 1.0
    assert np.allclose(t.rotation, np.eye(3), atol=1e-15) and np.allclose(t.translation, 0, atol=1e-15)


def test_sideways_rim_lands_on_z0():
    a = np.linspace(0, 2 * np.pi, 60, endpoint=False)
    rim = np.column_stack([np.full(60, 2.0), 3 + 0.4 * np.cos(a), -1 + 0.4 * np.sin(a)])
    pl = Plane(np.array([1.0, 0.0, 0.0]), 2.0)
    c, r = fit_circle_on_plane(rim, pl)
    t = compute_similarity_transform(PotReference(pl, c, r, 15.0))
    out = t.apply_points(rim)
    assert np.max(np.abs(out[:, 2])) < 1e-9
    assert np.allclose(np.hypot(out[:, 0], out[:, 1]), 7.5, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_exact_tilted_rim_recovers_scale(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    center = rng.uniform(-1, 1, 3)
    a = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    rim = np.column_stack([0.05 * np.cos(a), 0.05 * np.sin(a), np.zeros(200)]) @ R.T + center
    pl = fit_plane_lsq(rim)
    c, r = fit_circle_on_plane(rim, pl)
    t = compute_similarity_transform(PotReference(pl, c, r, 15.0))
    assert abs(t.scale - 150.0) < 1e-9
    out = t.apply_points(rim)
    diameter = 15.0
    assert np.max(np.abs(out[:, 2])) < 1e-6 * diameter
    assert np.max(np.abs(np.hypot(out[:, 0], out[:, 1]) - 7.5)) < 1e-6 * diameter


def test_nonpositive_radius_rejected():
    with pytest.raises(InvalidReferenceError):
        compute_similarity_transform(PotReference(Plane(np.array([0.0, 0, 1]), 0.0), np.zeros(3), 0.0))


def test_apply_transform_identity_and_scale():
    rng = np.random.default_rng(10)
    n = rng.normal(size=(30, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    cloud = PointCloud(rng.normal(size=(30, 3)), rng.integers(0, 256, (30, 3)), n)
    assert apply_transform(cloud, SimilarityTransform.identity()) == cloud
    doubled = apply_transform(cloud, SimilarityTransform(2.0, np.eye(3), np.zeros(3)))
    d0 = np.linalg.norm(cloud.points[:, None] - cloud.points[None], axis=2)
    d1 = np.linalg.norm(doubled.points[:, None] - doubled.points[None], axis=2)
    assert np.allclose(d1, 2 * d0, rtol=1e-12)
    assert np.array_equal(doubled.normals, cloud.normals)
    assert np.array_equal(doubled.colors, cloud.colors)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.floats(0.01, 100))
def test_compose_with_inverse_is_identity(seed, s):
    rng = np.random.default_rng(seed)
    t = SimilarityTransform(s, random_rotation(rng), rng.normal(size=3) * 10)
    ident = t.compose(t.inverse())
    assert abs(ident.scale - 1) < 1e-9
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(ident.translation, 0, atol=1e-9 * max(1.0, np.abs(t.translation).max()))


def test_transform_dict_round_trip():
    t = SimilarityTransform(3.0, random_rotation(np.random.default_rng(11)), [1.0, 2.0, 3.0])
    u = SimilarityTransform.from_dict(t.to_dict())
    assert u.scale == t.scale and np.array_equal(u.rotation, t.rotation)
