import json

import numpy as np
import pytest

from mumar.errors import LengthMismatch, PlyError
from mumar.geometry import PointCloud, RigidTransform
from mumar.io import (load_manifest, read_ply, read_ply_properties, read_transform,
                      write_dataset, write_ply, write_transform)
from mumar.synth import default_benchmark_scene, generate_views


def sample_cloud(n=50, normals=True, labels=True):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(n, 3))
    nrm = rng.normal(size=(n, 3)) if normals else None
    if nrm is not None:
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    lab = rng.integers(0, 6, n) if labels else None
    return PointCloud(pts, nrm, lab)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_roundtrip_is_exact(tmp_path, binary):
    cloud = sample_cloud()
    path = tmp_path / "c.ply"
    write_ply(cloud, path, binary)
    back = read_ply(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.normals, cloud.normals)
    assert np.array_equal(back.labels, cloud.labels)


def test_ply_scalars_roundtrip(tmp_path):
    cloud = sample_cloud(normals=False, labels=False)
    d = np.linspace(0, 1, len(cloud))
    rgb = np.arange(len(cloud), dtype=np.uint8)
    write_ply(cloud, tmp_path / "s.ply", scalars={"distance": d, "red": rgb})
    props = read_ply_properties(tmp_path / "s.ply")
    assert np.array_equal(props["distance"], d)
    assert props["red"].dtype == np.uint8 and np.array_equal(props["red"], rgb)


def test_ply_scalar_length_checked(tmp_path):
    with pytest.raises(LengthMismatch):
        write_ply(sample_cloud(), tmp_path / "x.ply", scalars={"d": np.zeros(3)})


def test_reads_float_xyz_ply_with_face_list(tmp_path):
    # typical third-party export: float32 coordinates and a face element
    path = tmp_path / "mesh.ply"
    path.write_text("ply\nformat ascii 1.0\ncomment made elsewhere\n"
                    "element vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
                    "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
                    "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    cloud = read_ply(path)
    assert cloud.points.shape == (3, 3)
    assert cloud.normals is None and cloud.labels is None


def test_binary_float_xyz_with_face_list(tmp_path):
    path = tmp_path / "bin.ply"
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n")
    body = np.array([[0, 0, 0], [1, 2, 3]], "<f4").tobytes()
    body += np.array([3], "u1").tobytes() + np.array([0, 1, 1], "<i4").tobytes()
    path.write_bytes(head.encode() + body)
    assert np.allclose(read_ply(path).points[1], [1, 2, 3])


@pytest.mark.parametrize("text", [
    "not a ply\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\n",
    "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n",
    "ply\nformat ascii 1.0\nelement vertex many\nend_header\n",
    "ply\nelement vertex 0\nproperty double x\nend_header\n",
])
def test_malformed_header_names_file(tmp_path, text):
    path = tmp_path / "bad.ply"
    path.write_text(text)
    with pytest.raises(PlyError, match="bad.ply"):
        read_ply(path)


def test_vertex_count_mismatch_raises(tmp_path):
    path = tmp_path / "short.ply"
    write_ply(sample_cloud(10), path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(PlyError, match="short.ply"):
        read_ply(path)
    path.write_bytes(data + b"\0" * 8)
    with pytest.raises(PlyError, match="trailing"):
        read_ply(path)


def test_missing_coordinates_raise(tmp_path):
    path = tmp_path / "noz.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\n"
                    "property double y\nend_header\n1 2\n")
    with pytest.raises(PlyError):
        read_ply(path)


def test_normals_length_mismatch_rejected():
    with pytest.raises(LengthMismatch):
        PointCloud(np.zeros((4, 3)), np.zeros((3, 3)))


def test_transform_roundtrip_is_exact(tmp_path):
    t = RigidTransform.from_axis_angle((1, 2, 3), 37.0, (0.1, -2.0, 1e-9))
    write_transform(t, tmp_path / "t.txt")
    assert np.array_equal(read_transform(tmp_path / "t.txt").matrix, t.matrix)


# --- dataset -----------------------------------------------------------------

def small_views(n=2):
    spec = default_benchmark_scene("cube", n_views=n, step=20.0, density=200, noise_sigma=0.002)
    return generate_views(spec, 0)


def test_dataset_roundtrip(tmp_path):
    views = small_views()
    manifest = write_dataset(views, tmp_path)
    back = load_manifest(manifest)
    assert len(back) == len(views)
    for u, v in zip(views, back):
        assert u.view_index == v.view_index
        assert np.array_equal(u.viewpoint, v.viewpoint)
        assert np.array_equal(u.ground_truth.matrix, v.ground_truth.matrix)
        for p, q in zip(u.clouds, v.clouds):
            assert np.array_equal(p.points, q.points)


def test_manifest_paths_are_relative(tmp_path):
    write_dataset(small_views(1), tmp_path / "a")
    (tmp_path / "a").rename(tmp_path / "b")
    assert len(load_manifest(tmp_path / "b")) == 1


def test_manifest_missing_file_raises(tmp_path):
    write_dataset(small_views(), tmp_path)
    (tmp_path / "views" / "001" / "object.ply").unlink()
    with pytest.raises(FileNotFoundError, match="object.ply"):
        load_manifest(tmp_path)


def test_manifest_inconsistent_entries_raise(tmp_path):
    manifest = write_dataset(small_views(), tmp_path)
    doc = json.loads(manifest.read_text())
    doc["views"][1]["markers"] = doc["views"][1]["markers"][:-1]
    manifest.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_manifest(manifest)


def test_manifest_invalid_json_raises(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ValueError, match="invalid JSON"):
        load_manifest(tmp_path)
