import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from mumar.errors import DegenerateSet, TooFewPoints
from mumar.geometry import (PlaneModel, PointCloud, RigidTransform, angle_between,
                            apply_transform, compose, estimate_normals, fit_plane, inverse,
                            project_onto_plane, rotation_from_normals)


def random_transform(rng, scale=1.0):
    return RigidTransform(Rotation.random(random_state=rng).as_matrix(),
                          rng.normal(scale=scale, size=3))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


# --- normals ---------------------------------------------------------------

def _plane_grid(rng, n=100):
    return np.column_stack([rng.random(n), rng.random(n), np.zeros(n)])


def test_normals_on_exact_plane_face_viewpoint():
    rng = np.random.default_rng(0)
    cloud = estimate_normals(PointCloud(_plane_grid(rng)), 10, (0, 0, 5))
    assert np.abs(cloud.normals - [0, 0, 1]).max() < 1e-6


def test_normals_flip_with_viewpoint():
    rng = np.random.default_rng(0)
    cloud = estimate_normals(PointCloud(_plane_grid(rng)), 10, (0, 0, -5))
    assert np.abs(cloud.normals - [0, 0, -1]).max() < 1e-6


def test_normals_on_noisy_plane_match_global_pca():
    rng = np.random.default_rng(1)
    pts = _plane_grid(rng, 100)
    pts[:, 2] = 0.001 * rng.standard_normal(len(pts))
    oracle = fit_plane(pts).normal
    cloud = estimate_normals(PointCloud(pts), 20, (0, 0, 5))
    ang = np.degrees(np.arccos(np.clip(np.abs(cloud.normals @ oracle), -1, 1)))
    assert ang.max() < 2.0


def test_normals_need_more_points_than_k():
    with pytest.raises(TooFewPoints):
        estimate_normals(PointCloud(np.zeros((5, 3))), 10)


# --- plane fitting -----------------------------------------------------------

def test_fit_plane_triangle():
    p = fit_plane([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
    assert abs(abs(p.normal @ [0, 0, 1]) - 1) < 1e-12
    assert np.allclose(p.centroid, [1 / 3, 1 / 3, 0], atol=1e-15)


def test_fit_plane_axis_square():
    rng = np.random.default_rng(2)
    pts = np.column_stack([np.full(1000, 2.0), rng.random(1000), rng.random(1000)])
    p = fit_plane(pts)
    assert abs(abs(p.normal[0]) - 1) < 1e-12
    assert abs(p.centroid[0] - 2) < 1e-12


def test_fit_plane_noisy_tilted():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-1, 1, size=(500, 2))
    z = 2 * xy[:, 0] + xy[:, 1] - 1 + 0.01 * rng.standard_normal(500)
    p = fit_plane(np.column_stack([xy, z]))
    truth = np.array([2, 1, -1]) / np.sqrt(6)
    assert min(angle_between(p.normal, truth), angle_between(-p.normal, truth)) < 0.5


def test_fit_plane_rejects_collinear():
    with pytest.raises(DegenerateSet):
        fit_plane([(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 3)])
    with pytest.raises(DegenerateSet):
        fit_plane([(0, 0, 0), (1, 0, 0)])


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_fit_plane_order_and_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(60, 3)) * [3, 2, 0.1]
    t = random_transform(rng)
    base = fit_plane(pts)
    shuffled = fit_plane(pts[rng.permutation(len(pts))])
    moved = fit_plane(t.apply(pts))
    assert 1 - abs(base.normal @ shuffled.normal) < 1e-9
    assert 1 - abs((t.rotation @ base.normal) @ moved.normal) < 1e-9


# --- rotation kernel -------------------------------------------------------

def test_rotation_identical_normals_is_identity():
    n = np.eye(3)
    t, flag = rotation_from_normals(n, n)
    assert not flag
    assert np.abs(t.rotation - np.eye(3)).max() < 1e-12


def test_rotation_recovers_known_17_degrees():
    rng = np.random.default_rng(4)
    axis = rng.normal(size=3)
    r0 = RigidTransform.from_axis_angle(axis, 17.0).rotation
    d = Rotation.random(random_state=5).as_matrix()
    t, flag = rotation_from_normals(d, d @ r0.T)
    assert not flag
    assert np.linalg.norm(t.rotation - r0) < 1e-9


def test_rotation_parallel_normals_flags_rank():
    d = np.array([[1.0, 0, 0], [1.0, 0, 0]])
    s = np.array([[0, 1.0, 0], [0, 1.0, 0]])
    t, flag = rotation_from_normals(d, s)
    assert flag
    assert np.allclose(t.rotation @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_rotation_never_reflects():
    # a mirrored set would be matched best by a reflection
    d = np.eye(3)
    s = np.diag([1.0, 1.0, -1.0])
    t, _ = rotation_from_normals(d, s)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_rotation_of_set_with_itself_is_identity(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(rng.integers(3, 8), 3))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    t, flag = rotation_from_normals(a, a)
    assert not flag
    assert np.abs(t.rotation - np.eye(3)).max() < 1e-9


# --- projection --------------------------------------------------------------

def test_project_axis():
    assert np.allclose(project_onto_plane((0, 0, 5), PlaneModel((0, 0, 1), (0, 0, 0))), 0)


def test_project_closed_form():
    plane = PlaneModel(np.ones(3) / np.sqrt(3), (0, 0, 0))
    assert np.allclose(project_onto_plane((1, 2, 3), plane), (-1, 0, 1), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_projection_idempotent_and_nearest(seed):
    rng = np.random.default_rng(seed)
    plane = PlaneModel(rng.normal(size=3), rng.normal(size=3))
    p = rng.normal(scale=3, size=3)
    q = project_onto_plane(p, plane)
    assert abs(plane.signed_distance(q)) < 1e-12
    assert np.allclose(project_onto_plane(q, plane), q, atol=1e-12)
    others = project_onto_plane(rng.normal(scale=5, size=(1000, 3)), plane)
    assert np.linalg.norm(p - q) <= np.linalg.norm(p - others, axis=1).min() + 1e-12


# --- transforms --------------------------------------------------------------

def test_identity_leaves_cloud_unchanged():
    rng = np.random.default_rng(6)
    c = PointCloud(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
    out = apply_transform(RigidTransform.identity(), c)
    assert np.array_equal(out.points, c.points)
    assert np.array_equal(out.normals, c.normals)


def test_pure_translation():
    t = RigidTransform(np.eye(3), (1, 0, 0))
    assert np.allclose(t.apply([[0, 0, 0]]), [[1, 0, 0]])


def test_angle_between_basic():
    assert angle_between((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0)
    v = np.array([0.3, -0.2, 0.9])
    assert angle_between(v, v) == pytest.approx(0.0, abs=1e-12)


def test_invalid_rotation_rejected():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 1.01)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_compose_inverse_and_sequential_application(seed):
    rng = np.random.default_rng(seed)
    a, b = random_transform(rng), random_transform(rng)
    p = rng.normal(size=(100, 3))
    assert np.abs(compose(a, b).apply(p) - a.apply(b.apply(p))).max() < 1e-12
    assert np.abs(compose(a, inverse(a)).apply(p) - p).max() < 1e-12
    c = compose(a, b)
    assert np.abs(c.rotation.T @ c.rotation - np.eye(3)).max() < 1e-9


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_transform_preserves_distances(seed):
    rng = np.random.default_rng(seed)
    t = random_transform(rng, scale=10)
    p = rng.normal(size=(40, 3))
    q = t.apply(p)
    d0 = np.linalg.norm(p[:, None] - p[None], axis=-1)
    d1 = np.linalg.norm(q[:, None] - q[None], axis=-1)
    assert np.abs(d1 - d0).max() <= 1e-9 * max(d0.max(), 1.0)
