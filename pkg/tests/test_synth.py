import numpy as np
import pytest

from mumar.evaluation import point_mesh_distances
from mumar.geometry import PointCloud, apply_transform
from mumar.synth import (SceneSpec, SyntheticView, add_noise, default_benchmark_scene,
                         generate_mesh, generate_views, ray_blocked, render_view,
                         single_marker_scene)


def signed_volume(mesh):
    t = mesh.triangles
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


# --- meshes ------------------------------------------------------------------

def test_unit_cube_area_and_faces():
    m = generate_mesh("cube", 1.0)
    assert m.surface_area == pytest.approx(6.0)
    assert m.n_faces == 6


def test_pyramid_has_five_faces():
    m = generate_mesh("pyramid", 1.0)
    assert m.n_faces == 5
    slant = np.sqrt(1.0 + 0.25)
    assert m.surface_area == pytest.approx(1.0 + 2.0 * slant)


def test_double_pyramid_is_point_symmetric_about_tip():
    m = generate_mesh("double_pyramid", 1.2, 0.8)
    tip = np.array([0.0, 0.0, 0.8])
    reflected = 2 * tip - m.vertices
    for v in reflected:
        assert np.min(np.linalg.norm(m.vertices - v, axis=1)) < 1e-12
    assert m.n_faces == 10


@pytest.mark.parametrize("shape,size,height,volume", [
    ("cube", 1.3, None, 1.3 ** 3),
    ("pyramid", 1.4, 1.4, 1.4 ** 3 / 3),
    ("double_pyramid", 1.2, 0.8, 2 * 1.2 ** 2 * 0.8 / 3),
])
def test_outward_winding(shape, size, height, volume):
    # positive signed volume equal to the solid's volume means every face points outward
    assert signed_volume(generate_mesh(shape, size, height)) == pytest.approx(volume)


def test_unknown_shape_rejected():
    with pytest.raises(ValueError):
        generate_mesh("sphere", 1.0)


# --- rendering ---------------------------------------------------------------

def visible_faces(view_direction):
    spec = single_marker_scene("cube", view_direction=view_direction, points_per_face=500)
    return set(render_view(spec, 0).marker_clouds[0].labels.tolist())


def test_face_on_cube_shows_one_face():
    assert len(visible_faces((0, -1, 0))) == 1


def test_corner_on_cube_shows_three_faces():
    assert len(visible_faces((1, 1, 1))) == 3


def _blocked_oracle(origin, point, tris, skip):
    """Per-point ray test: intersect the segment with each triangle's plane."""
    for j, (a, b, c) in enumerate(tris):
        if j == skip:
            continue
        n = np.cross(b - a, c - a)
        d = point - origin
        denom = n @ d
        if abs(denom) < 1e-15:
            continue
        t = n @ (a - origin) / denom
        if not 1e-9 < t < 1 - 1e-7:
            continue
        x = origin + t * d
        # inside when x lies on the same side of every edge
        s = [np.cross(q - p, x - p) @ n for p, q in ((a, b), (b, c), (c, a))]
        if min(s) >= -1e-12 * (n @ n) or max(s) <= 1e-12 * (n @ n):
            return True
    return False


def test_ray_blocking_matches_per_point_oracle():
    rng = np.random.default_rng(0)
    tris = generate_mesh("cube", 1.0).triangles
    origin = np.array([0.3, -4.0, 1.8])
    points = rng.uniform([-1, -1, -0.5], [1, 2, 1.5], (300, 3))
    skip = rng.integers(0, len(tris), 300)
    got = ray_blocked(origin, points, tris, skip=skip)
    want = [_blocked_oracle(origin, p, tris, s) for p, s in zip(points, skip)]
    assert got.tolist() == want
    assert 0 < got.sum() < len(points)


def test_rendered_points_are_unoccluded():
    spec = default_benchmark_scene("cube", n_views=2, density=300)
    for k in range(2):
        view = render_view(spec, k)
        motion = spec.motion(k)
        tris = np.concatenate([m.transformed(motion).triangles for m in spec.static_meshes()])
        pts = np.concatenate([c.points for c in view.clouds])
        # nudge each sample towards the camera so its own face does not count
        cam = np.asarray(spec.camera)
        nudged = pts + 1e-6 * (cam - pts)
        assert not ray_blocked(cam, nudged, tris).any()


def test_culling_removes_back_faces():
    spec = default_benchmark_scene("cube", n_views=1, density=300)
    view = render_view(spec, 0)
    cam = np.asarray(spec.camera)
    for cloud, placement in zip(view.marker_clouds, spec.markers):
        mesh = placement.mesh()
        normals = {int(f): n for f, n in zip(mesh.face_ids, mesh.triangle_normals)}
        for label in np.unique(cloud.labels):
            pts = cloud.points[cloud.labels == label]
            assert np.all((cam - pts) @ normals[int(label)] > 0)


# --- noise -------------------------------------------------------------------

def _flat_view(n=100_000):
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(-1, 1, n), np.zeros(n), rng.uniform(0, 2, n)])
    return SyntheticView(0, [], PointCloud(pts), None, np.array([0.0, -8.0, 4.5]))


def test_zero_sigma_leaves_cloud_unchanged():
    spec = default_benchmark_scene("cube", n_views=1, density=300)
    view = render_view(spec, 0)
    noisy = add_noise(view, 0.0)
    assert noisy.object_cloud.points.tobytes() == view.object_cloud.points.tobytes()


def test_ray_noise_statistics():
    sigma = 0.003
    view = _flat_view()
    noisy = add_noise(view, sigma, 0)
    disp = noisy.object_cloud.points - view.object_cloud.points
    rays = view.object_cloud.points - view.viewpoint
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    along = np.einsum("ij,ij->i", disp, rays)
    assert abs(along.std() / sigma - 1) < 0.05
    ortho = disp - along[:, None] * rays
    assert np.abs(ortho).max() < 1e-12


def test_noise_is_seed_deterministic():
    view = _flat_view(1000)
    a = add_noise(view, 0.01, 5).object_cloud.points
    b = add_noise(view, 0.01, 5).object_cloud.points
    c = add_noise(view, 0.01, 6).object_cloud.points
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_generation_is_seed_deterministic():
    spec = default_benchmark_scene("pyramid", n_views=2, density=300, noise_sigma=0.002)
    a = generate_views(spec, 3)
    b = generate_views(spec, 3)
    for u, v in zip(a, b):
        for p, q in zip(u.clouds, v.clouds):
            assert p.points.tobytes() == q.points.tobytes()


# --- scene -------------------------------------------------------------------

def test_default_scene_layout():
    spec = default_benchmark_scene()
    assert len(spec.markers) == 4
    assert spec.n_views == 60 and spec.step == 6.0
    # markers surround the object: their azimuths cover all four quadrants
    az = sorted(np.degrees(np.arctan2(m.position[1], m.position[0])) % 360 for m in spec.markers)
    assert np.all(np.diff(az) < 180) and az[0] + 360 - az[-1] < 180


def test_scene_roundtrips_through_dict():
    spec = default_benchmark_scene("cube", noise_sigma=0.002)
    assert SceneSpec.from_dict(spec.to_dict()) == spec


def test_too_many_views_rejected():
    with pytest.raises(ValueError):
        default_benchmark_scene(n_views=61)


def test_ground_truth_overlays_views_on_meshes():
    sigma = 0.002
    spec = default_benchmark_scene("double_pyramid", n_views=3, step=40.0,
                                   density=500, noise_sigma=sigma)
    bound = 3 * sigma + spec.sampling_pitch
    for view in generate_views(spec, 0):
        for cloud, mesh in zip(view.clouds, spec.static_meshes()):
            d = point_mesh_distances(apply_transform(view.ground_truth, cloud).points, mesh)
            assert np.mean(d <= bound) > 0.997


def test_cube_visible_face_count_in_range():
    spec = default_benchmark_scene("cube", n_views=12, step=30.0, density=200)
    for k in range(spec.n_views):
        for cloud in render_view(spec, k).marker_clouds:
            counts = np.bincount(cloud.labels, minlength=6)
            # ignore slivers of a few points on grazing faces
            assert 1 <= np.sum(counts > 20) <= 3
