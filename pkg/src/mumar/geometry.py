"""Core 3D types and numerical kernels.

Points, normals and plane models are plain numpy arrays wrapped in small
frozen dataclasses. Every operation here is a pure function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DegenerateSet, EmptyInput, LengthMismatch, TooFewPoints

ORTHO_TOL = 1e-9
UNIT_TOL = 1e-9


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalise a zero vector")
    return v / n


@dataclass(frozen=True)
class PlaneModel:
    """A plane summarised by its unit normal and the centroid of its support."""

    normal: np.ndarray
    centroid: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        c = np.asarray(self.centroid, dtype=float).reshape(3)
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(n)):
            raise ValueError("plane model must be finite")
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > UNIT_TOL:
            n = n / norm
        object.__setattr__(self, "normal", _frozen(n))
        object.__setattr__(self, "centroid", _frozen(c))

    def signed_distance(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.centroid) @ self.normal

    def flipped(self) -> "PlaneModel":
        return PlaneModel(-self.normal, self.centroid)

    def transformed(self, t: "RigidTransform") -> "PlaneModel":
        return PlaneModel(t.rotation @ self.normal, t.apply(self.centroid))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: ``p -> R @ p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis, degrees: float, translation=(0.0, 0.0, 0.0)):
        rotvec = unit(axis) * np.radians(degrees)
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def angle_degrees(self) -> float:
        return float(np.degrees(Rotation.from_matrix(self.rotation).magnitude()))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


@dataclass(frozen=True)
class PointCloud:
    """Points with optional per-point unit normals and integer labels."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            pts = pts.reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise LengthMismatch(
                    f"{len(nrm)} normals for {len(pts)} points")
            object.__setattr__(self, "normals", _frozen(nrm))
        if self.labels is not None:
            lab = np.asarray(self.labels).reshape(-1)
            if len(lab) != len(pts):
                raise LengthMismatch(f"{len(lab)} labels for {len(pts)} points")
            object.__setattr__(self, "labels", _frozen(lab, dtype=np.int64))

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.labels is None else self.labels[idx],
        )

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, normals, self.labels)

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            raise EmptyInput("nothing to concatenate")
        pts = np.concatenate([c.points for c in clouds])
        normals = labels = None
        if all(c.normals is not None for c in clouds):
            normals = np.concatenate([c.normals for c in clouds])
        if all(c.labels is not None for c in clouds):
            labels = np.concatenate([c.labels for c in clouds])
        return PointCloud(pts, normals, labels)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def angle_between(u, v) -> float:
    """Angle in degrees between two directions, in [0, 180]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    # atan2 form stays accurate near 0 and 180 degrees
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(u, v)), u @ v)))


def angles_between(u, v) -> np.ndarray:
    """Row-wise version of :func:`angle_between`."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.degrees(np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1),
                                 np.sum(u * v, axis=-1)))


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    normals = None if cloud.normals is None else t.apply_vectors(cloud.normals)
    return PointCloud(t.apply(cloud.points), normals, cloud.labels)


def project_onto_plane(point, plane: PlaneModel) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    return p - np.multiply.outer((p - plane.centroid) @ plane.normal, plane.normal)


def _covariance_eig(points: np.ndarray):
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    w, v = np.linalg.eigh(cov)
    return centroid, w, v


def fit_plane(points) -> PlaneModel:
    """Least-squares plane through ``points`` (centroid + least-variance axis)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateSet(f"need at least 3 points, got {len(pts)}")
    centroid, w, v = _covariance_eig(pts)
    if w[2] <= 0 or w[1] <= 1e-12 * w[2]:
        raise DegenerateSet("points are collinear or coincident")
    return PlaneModel(v[:, 0], centroid)


def rotation_from_normals(data_normals, scene_normals):
    """Rotation best mapping paired data normals onto scene normals.

    Returns ``(transform, rank_deficient)``. When every normal is parallel
    to one axis the rotation about that axis is unconstrained; the flag is
    set and the smallest rotation aligning the common axis is returned.
    """
    d = np.asarray(data_normals, dtype=float).reshape(-1, 3)
    s = np.asarray(scene_normals, dtype=float).reshape(-1, 3)
    if len(d) != len(s):
        raise LengthMismatch(f"{len(d)} data vs {len(s)} scene normals")
    if len(d) == 0:
        raise EmptyInput("no normal pairs")
    h = d.T @ s
    u, sv, vt = np.linalg.svd(h)
    if sv[0] == 0:
        return RigidTransform.identity(), True
    if sv[1] <= 1e-9 * sv[0]:
        return RigidTransform(_minimal_rotation(u[:, 0], vt[0])), True
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    return RigidTransform(_orthonormalize(r)), False


def _minimal_rotation(a, b) -> np.ndarray:
    a = unit(a)
    b = unit(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = a @ b
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # 180 degrees about any axis orthogonal to a
        perp = np.eye(3)[np.argmin(np.abs(a))]
        axis = unit(np.cross(a, perp))
        return Rotation.from_rotvec(axis * np.pi).as_matrix()
    return Rotation.from_rotvec(axis / s * np.arctan2(s, c)).as_matrix()


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    m = u @ vt
    if np.linalg.det(m) < 0:
        u[:, -1] *= -1
        m = u @ vt
    return m


def estimate_normals(cloud: PointCloud, k: int = 10, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from local PCA over the ``k`` nearest neighbours.

    Normals are oriented so that ``normal . (viewpoint - point) >= 0``.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    pts = cloud.points
    if len(pts) <= k:
        raise TooFewPoints(f"{len(pts)} points, need more than k={k}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.matmul(centered.transpose(0, 2, 1), centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    to_view = np.asarray(viewpoint, dtype=float) - pts
    flip = np.sum(normals * to_view, axis=1) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)
