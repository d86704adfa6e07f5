"""Synthetic turntable scenes.

Markers and a target object are triangle meshes standing on the turntable
plane (z = 0). Each view rotates the scene about the z axis, samples the
front-facing triangles, removes occluded samples by ray casting from the
camera, and optionally displaces points along their camera rays with
Gaussian noise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import PointCloud, RigidTransform, inverse, unit

SHAPES = ("cube", "pyramid", "double_pyramid")


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_ids: np.ndarray

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @property
    def triangle_normals(self) -> np.ndarray:
        t = self.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def triangle_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    @property
    def surface_area(self) -> float:
        return float(self.triangle_areas.sum())

    @property
    def n_faces(self) -> int:
        return len(np.unique(self.face_ids))

    def transformed(self, t: RigidTransform) -> "Mesh":
        return Mesh(t.apply(self.vertices), self.faces, self.face_ids)


def _quad(a, b, c, d):
    return [(a, b, c), (a, c, d)]


def generate_mesh(shape: str, size: float, height: Optional[float] = None) -> Mesh:
    """Closed mesh standing on z = 0, centred on the z axis.

    ``size`` is the cube edge or the pyramid base edge; ``height`` defaults
    to ``size`` and is the apex height of each pyramid. Triangles are wound
    counter-clockwise seen from outside.
    """
    if size <= 0:
        raise ValueError("size must be positive")
    h = size if height is None else height
    a = size / 2.0
    if shape == "cube":
        v = np.array([[-a, -a, 0], [a, -a, 0], [a, a, 0], [-a, a, 0],
                      [-a, -a, size], [a, -a, size], [a, a, size], [-a, a, size]], float)
        quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
                 (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
        faces, ids = [], []
        for fid, q in enumerate(quads):
            for tri in _quad(*q):
                faces.append(tri)
                ids.append(fid)
    elif shape == "pyramid":
        v = np.array([[-a, -a, 0], [a, -a, 0], [a, a, 0], [-a, a, 0], [0, 0, h]], float)
        faces = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4), (0, 3, 2), (0, 2, 1)]
        ids = [0, 1, 2, 3, 4, 4]
    elif shape == "double_pyramid":
        # lower pyramid apex up, upper pyramid inverted, joined at the tips
        v = np.array([[-a, -a, 0], [a, -a, 0], [a, a, 0], [-a, a, 0],
                      [0, 0, h],
                      [-a, -a, 2 * h], [a, -a, 2 * h], [a, a, 2 * h], [-a, a, 2 * h]], float)
        faces = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4),
                 (6, 5, 4), (7, 6, 4), (8, 7, 4), (5, 8, 4),
                 (0, 3, 2), (0, 2, 1), (5, 6, 7), (5, 7, 8)]
        ids = [0, 1, 2, 3, 4, 5, 6, 7, 8, 8, 9, 9]
    else:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    return Mesh(v, np.array(faces, dtype=np.int64), np.array(ids, dtype=np.int64))


@dataclass(frozen=True)
class Placement:
    shape: str
    size: float
    position: Tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0
    height: Optional[float] = None

    def pose(self) -> RigidTransform:
        return RigidTransform.from_axis_angle(
            (0, 0, 1), self.yaw, (self.position[0], self.position[1], 0.0))

    def mesh(self) -> Mesh:
        return generate_mesh(self.shape, self.size, self.height).transformed(self.pose())


@dataclass(frozen=True)
class SceneSpec:
    markers: Tuple[Placement, ...]
    object: Placement
    camera: Tuple[float, float, float] = (0.0, -8.0, 4.5)
    target: Tuple[float, float, float] = (0.0, 0.0, 0.5)
    n_views: int = 60
    step: float = 6.0
    slide: Optional[Tuple[float, float, float]] = None
    density: float = 2000.0
    noise_sigma: float = 0.0
    noise_mode: str = "ray"

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(self.markers))
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.slide is None and abs(self.n_views * self.step) > 360.0 + 1e-9:
            raise ValueError("n_views * step exceeds a full turn")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.noise_mode not in ("ray", "isotropic"):
            raise ValueError("noise_mode must be 'ray' or 'isotropic'")

    @property
    def marker_edge(self) -> float:
        return float(np.median([m.size for m in self.markers]))

    @property
    def sampling_pitch(self) -> float:
        return float(1.0 / np.sqrt(self.density))

    def static_meshes(self) -> List[Mesh]:
        return [m.mesh() for m in self.markers] + [self.object.mesh()]

    def object_mesh(self) -> Mesh:
        return self.object.mesh()

    @property
    def diameter(self) -> float:
        v = np.concatenate([m.vertices for m in self.static_meshes()])
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def motion(self, view_index: int) -> RigidTransform:
        """Rigid motion carrying the static scene into view ``view_index``."""
        if self.slide is not None:
            return RigidTransform(np.eye(3), np.asarray(self.slide, float) * view_index)
        return RigidTransform.from_axis_angle((0, 0, 1), view_index * self.step)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["markers"] = tuple(Placement(**_tuples(m)) for m in d["markers"])
        d["object"] = Placement(**_tuples(d["object"]))
        for k in ("camera", "target", "slide"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


def _tuples(d: dict) -> dict:
    d = dict(d)
    if "position" in d:
        d["position"] = tuple(d["position"])
    return d


@dataclass
class SyntheticView:
    view_index: int
    marker_clouds: List[PointCloud]
    object_cloud: PointCloud
    ground_truth: Optional[RigidTransform]
    viewpoint: np.ndarray

    @property
    def clouds(self) -> List[PointCloud]:
        return list(self.marker_clouds) + [self.object_cloud]


def default_benchmark_scene(object_shape: str = "double_pyramid", *,
                            noise_sigma: float = 0.0, n_views: int = 60,
                            step: float = 6.0, density: float = 2000.0) -> SceneSpec:
    """Four unit cube markers around a target object on a 60 x 6 degree turn."""
    sizes = {"cube": (1.2, None), "pyramid": (1.4, 1.4), "double_pyramid": (1.2, 0.8)}
    if object_shape not in sizes:
        raise ValueError(f"unknown object shape {object_shape!r}")
    size, height = sizes[object_shape]
    radius = 2.3
    yaws = (10.0, 55.0, 30.0, 75.0)
    markers = tuple(
        Placement("cube", 1.0,
                  (radius * np.cos(np.radians(az)), radius * np.sin(np.radians(az))), yaw)
        for az, yaw in zip((45.0, 135.0, 225.0, 315.0), yaws))
    return SceneSpec(markers=markers, object=Placement(object_shape, size, (0.0, 0.0), 0.0, height),
                     n_views=n_views, step=step, density=density, noise_sigma=noise_sigma)


def _sample_triangles(tris: np.ndarray, counts: np.ndarray, rng) -> Tuple[np.ndarray, np.ndarray]:
    owner = np.repeat(np.arange(len(tris)), counts)
    u = rng.random(len(owner))
    v = rng.random(len(owner))
    su = np.sqrt(u)
    b0, b1, b2 = 1.0 - su, su * (1.0 - v), su * v
    t = tris[owner]
    pts = b0[:, None] * t[:, 0] + b1[:, None] * t[:, 1] + b2[:, None] * t[:, 2]
    return pts, owner


def ray_blocked(origin, points: np.ndarray, tris: np.ndarray,
                skip: Optional[np.ndarray] = None, eps: float = 1e-9,
                chunk: int = 4096) -> np.ndarray:
    """True where the segment origin -> point crosses any triangle first.

    ``skip[i]`` is a triangle index ignored for point ``i`` (its own face).
    """
    origin = np.asarray(origin, float)
    blocked = np.zeros(len(points), dtype=bool)
    if len(tris) == 0 or len(points) == 0:
        return blocked
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    tvec = origin - v0
    for s in range(0, len(points), chunk):
        d = points[s:s + chunk] - origin
        p = np.cross(d[:, None, :], e2[None, :, :])
        det = np.einsum("ntk,tk->nt", p, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = np.einsum("ntk,tk->nt", p, tvec) * inv
            q = np.cross(tvec, e1)
            v = np.einsum("nk,tk->nt", d, q) * inv
            t = np.einsum("tk,tk->t", e2, q)[None, :] * inv
        hit = (np.abs(det) > 1e-15) & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) \
            & (t > eps) & (t < 1 - 1e-7)
        if skip is not None:
            hit[np.arange(len(d)), skip[s:s + chunk]] = False
        blocked[s:s + chunk] = hit.any(axis=1)
    return blocked


def render_view(spec: SceneSpec, view_index: int, rng_seed: int = 0) -> SyntheticView:
    """Noise-free visible samples of every mesh for one turntable position."""
    if not 0 <= view_index < spec.n_views:
        raise IndexError(f"view {view_index} outside 0..{spec.n_views - 1}")
    rng = np.random.default_rng([rng_seed, view_index])
    motion = spec.motion(view_index)
    cam = np.asarray(spec.camera, float)
    meshes = [m.transformed(motion) for m in spec.static_meshes()]

    front = []
    for m in meshes:
        tris = m.triangles
        vis = np.einsum("tk,tk->t", m.triangle_normals, cam - tris[:, 0]) > 0
        front.append(vis)
    occluders = np.concatenate([m.triangles[f] for m, f in zip(meshes, front)])
    offsets = np.cumsum([0] + [int(f.sum()) for f in front])

    clouds = []
    for k, (m, vis) in enumerate(zip(meshes, front)):
        tri_idx = np.flatnonzero(vis)
        counts = np.rint(m.triangle_areas[tri_idx] * spec.density).astype(int)
        pts, owner = _sample_triangles(m.triangles[tri_idx], counts, rng)
        own = offsets[k] + owner
        keep = ~ray_blocked(cam, pts, occluders, skip=own)
        labels = m.face_ids[tri_idx][owner]
        clouds.append(PointCloud(pts[keep], labels=labels[keep]))

    return SyntheticView(view_index, clouds[:-1], clouds[-1], inverse(motion), cam)


def add_noise(view: SyntheticView, sigma: float, rng_seed: int = 0,
              mode: str = "ray") -> SyntheticView:
    """Zero-mean Gaussian displacement; along camera rays by default."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return view
    rng = np.random.default_rng([rng_seed, view.view_index, 7919])

    def perturb(c: PointCloud) -> PointCloud:
        if mode == "ray":
            rays = c.points - view.viewpoint
            rays /= np.linalg.norm(rays, axis=1, keepdims=True)
            disp = rng.normal(0.0, sigma, len(c))[:, None] * rays
        elif mode == "isotropic":
            disp = rng.normal(0.0, sigma, (len(c), 3))
        else:
            raise ValueError(f"unknown noise mode {mode!r}")
        return PointCloud(c.points + disp, None, c.labels)

    return SyntheticView(view.view_index, [perturb(c) for c in view.marker_clouds],
                         perturb(view.object_cloud), view.ground_truth, view.viewpoint)


def generate_views(spec: SceneSpec, rng_seed: int = 0) -> List[SyntheticView]:
    views = []
    for i in range(spec.n_views):
        v = render_view(spec, i, rng_seed)
        views.append(add_noise(v, spec.noise_sigma, rng_seed, spec.noise_mode))
    return views


def single_marker_scene(shape: str = "cube", size: float = 1.0, *,
                        view_direction=(1.0, 1.0, 1.0), distance: float = 8.0,
                        points_per_face: float = 2000.0, yaw: float = 0.0,
                        height: Optional[float] = None) -> SceneSpec:
    """One marker seen from ``view_direction``; handy for detection tests."""
    mesh = generate_mesh(shape, size, height)
    center = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    cam = center + distance * unit(view_direction)
    face_area = size * size if shape == "cube" else mesh.surface_area / mesh.n_faces
    # the target object is parked far behind the camera and never seen
    hidden = Placement("cube", 0.01, (1e3, 1e3))
    return SceneSpec(markers=(Placement(shape, size, (0.0, 0.0), yaw, height),),
                     object=hidden, camera=tuple(cam), target=tuple(center), n_views=1,
                     step=0.0, density=points_per_face / face_area)
