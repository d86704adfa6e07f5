"""Plane detection for multi-planar markers.

A segmented marker cloud is split into candidate faces with k-means over
positions and normals, then each face's plane is estimated with a RANSAC
variant that only accepts models satisfying the marker's known geometry
(number of visible faces, angles between faces).
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

from .errors import (ConstraintsUnsatisfiable, DegenerateSet, NoClustersSurvive,
                     TooFewPoints)
from .geometry import PlaneModel, PointCloud, angles_between, fit_plane


@dataclass(frozen=True)
class MarkerConstraints:
    max_visible_planes: int = 3
    pairwise_angles: Sequence[float] = (90.0,)
    angle_tolerance: float = 5.0
    inlier_distance: float = 0.02
    cluster_overshoot: float = 0.4
    shape: str = "cube"

    def __post_init__(self):
        object.__setattr__(self, "pairwise_angles",
                           tuple(float(a) for a in self.pairwise_angles))
        if self.max_visible_planes < 1:
            raise ValueError("max_visible_planes must be >= 1")
        if self.angle_tolerance <= 0:
            raise ValueError("angle_tolerance must be positive")
        if self.inlier_distance <= 0:
            raise ValueError("inlier_distance must be positive")
        if not 0 <= self.cluster_overshoot < 1:
            raise ValueError("cluster_overshoot must lie in [0, 1)")

    @property
    def n_clusters(self) -> int:
        m = self.max_visible_planes * (1.0 + self.cluster_overshoot)
        return int(np.floor(m + 0.5))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pairwise_angles"] = list(self.pairwise_angles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarkerConstraints":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    @classmethod
    def from_face_normals(cls, normals, max_visible_planes: int, shape: str = "custom",
                          **kw) -> "MarkerConstraints":
        """Allowed angles are every folded pairwise angle between distinct faces."""
        n = np.asarray(normals, dtype=float)
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
        i, j = np.triu_indices(len(n), 1)
        folded = fold_angle(angles_between(n[i], n[j]))
        allowed = sorted({round(float(a), 9) for a in folded})
        return cls(max_visible_planes=max_visible_planes, pairwise_angles=tuple(allowed),
                   shape=shape, **kw)

    @classmethod
    def cube(cls, edge: float = 1.0, **kw) -> "MarkerConstraints":
        kw.setdefault("inlier_distance", 0.02 * edge)
        return cls(max_visible_planes=3, pairwise_angles=(90.0,), shape="cube", **kw)


@dataclass
class FaceCluster:
    member_indices: np.ndarray
    seed_model: PlaneModel

    def __len__(self):
        return len(self.member_indices)


def fold_angle(a):
    """Map an angle in degrees onto [0, 90] so normal sign does not matter."""
    a = np.mod(np.asarray(a, dtype=float), 180.0)
    return np.minimum(a, 180.0 - a)


def _angles_allowed(angles, constraints: MarkerConstraints) -> np.ndarray:
    folded = fold_angle(angles)
    allowed = fold_angle(np.asarray(constraints.pairwise_angles))
    dev = np.abs(folded[..., None] - allowed)
    return np.any(dev <= constraints.angle_tolerance, axis=-1)


def check_constraints(planes: Sequence[PlaneModel], constraints: MarkerConstraints) -> bool:
    if len(planes) == 0:
        return False
    if len(planes) > constraints.max_visible_planes:
        return False
    for a, b in itertools.combinations(planes, 2):
        ang = angles_between(a.normal, b.normal)
        if not _angles_allowed(ang, constraints):
            return False
    return True


def _oriented(plane: PlaneModel, reference_normal) -> PlaneModel:
    if plane.normal @ reference_normal < 0:
        return plane.flipped()
    return plane


def _mean_normal(normals: np.ndarray) -> np.ndarray:
    m = normals.mean(axis=0)
    n = np.linalg.norm(m)
    return m / n if n > 0 else m


def cluster_faces(cloud: PointCloud, constraints: MarkerConstraints,
                  rng_seed: int = 0) -> List[FaceCluster]:
    """Split a marker cloud into at most ``max_visible_planes`` face clusters."""
    if cloud.normals is None:
        raise ValueError("cluster_faces needs per-point normals")
    m = constraints.n_clusters
    n_pts = len(cloud)
    if n_pts < 3 * m:
        raise TooFewPoints(f"{n_pts} points for {m} clusters")
    pts = cloud.points
    center = pts.mean(axis=0)
    radius = np.linalg.norm(pts - center, axis=1).max()
    # isotropic scaling keeps the feature space rotation invariant
    scaled = (pts - center) / (radius if radius > 0 else 1.0)
    features = np.hstack([scaled, cloud.normals])
    km = KMeans(n_clusters=m, n_init=3, random_state=rng_seed).fit(features)
    groups = [np.flatnonzero(km.labels_ == j) for j in range(m)]

    clusters = []
    for g in groups:
        seed = _robust_seed(cloud, g, constraints)
        if seed is not None:
            clusters.append(FaceCluster(g, seed))

    clusters = _merge_coplanar(clusters, cloud, constraints)
    min_size = 0.01 * n_pts
    clusters = [c for c in clusters if len(c) >= min_size]
    if not clusters:
        raise NoClustersSurvive("every face cluster was rejected")
    clusters.sort(key=lambda c: (-len(c), int(c.member_indices[0])))
    # largest first; a cluster whose seed contradicts the marker geometry
    # of the ones already kept straddles faces and is dropped
    kept: List[FaceCluster] = []
    for c in clusters:
        if check_constraints([k.seed_model for k in kept] + [c.seed_model], constraints):
            kept.append(c)
        if len(kept) == constraints.max_visible_planes:
            break
    return kept


def _robust_seed(cloud: PointCloud, members: np.ndarray,
                 constraints: MarkerConstraints) -> Optional[PlaneModel]:
    """Plane through the members whose normals agree with the cluster's median normal."""
    if len(members) < 3:
        return None
    normals = cloud.normals[members]
    med = np.median(normals, axis=0)
    if np.linalg.norm(med) == 0:
        med = _mean_normal(normals)
    med = med / np.linalg.norm(med)
    agree = angles_between(normals, med) < max(3.0 * constraints.angle_tolerance, 15.0)
    support = members[agree] if agree.sum() >= 3 else members
    try:
        seed = fit_plane(cloud.points[support])
    except DegenerateSet:
        return None
    return _oriented(seed, med)


def _coplanar(a: PlaneModel, b: PlaneModel, constraints: MarkerConstraints) -> bool:
    if fold_angle(angles_between(a.normal, b.normal)) >= constraints.angle_tolerance:
        return False
    d = min(abs(a.signed_distance(b.centroid)), abs(b.signed_distance(a.centroid)))
    return d < constraints.inlier_distance


def _merge_coplanar(clusters, cloud, constraints):
    merged = True
    while merged and len(clusters) > 1:
        merged = False
        for i, j in itertools.combinations(range(len(clusters)), 2):
            if _coplanar(clusters[i].seed_model, clusters[j].seed_model, constraints):
                idx = np.sort(np.concatenate([clusters[i].member_indices,
                                              clusters[j].member_indices]))
                seed = _robust_seed(cloud, idx, constraints)
                clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
                clusters.append(FaceCluster(idx, seed))
                merged = True
                break
    return clusters


class _PlaneAccumulator:
    """Running first and second moments of a growing point set."""

    def __init__(self, points: np.ndarray, origin: np.ndarray):
        self.origin = origin
        q = points - origin
        self.n = len(q)
        self.s = q.sum(axis=0)
        self.ss = q.T @ q

    def add(self, points: np.ndarray):
        q = points - self.origin
        self.n += len(q)
        self.s += q.sum(axis=0)
        self.ss += q.T @ q

    def model(self) -> PlaneModel:
        mean = self.s / self.n
        cov = self.ss / self.n - np.outer(mean, mean)
        _, v = np.linalg.eigh(cov)
        return PlaneModel(v[:, 0], mean + self.origin)

    def prefix_normals(self, points: np.ndarray) -> np.ndarray:
        """Normals of the set after adding each prefix of ``points``."""
        q = points - self.origin
        n = self.n + np.arange(1, len(q) + 1)
        s = self.s + np.cumsum(q, axis=0)
        ss = self.ss + np.cumsum(q[:, :, None] * q[:, None, :], axis=0)
        mean = s / n[:, None]
        cov = ss / n[:, None, None] - np.einsum("ni,nj->nij", mean, mean)
        _, v = np.linalg.eigh(cov)
        return v[:, :, 0]


def _others_ok(normals: np.ndarray, others: Sequence[PlaneModel],
               constraints: MarkerConstraints) -> np.ndarray:
    ok = np.ones(len(normals), dtype=bool)
    for o in others:
        ok &= _angles_allowed(angles_between(normals, o.normal), constraints)
    return ok


def _grow(cloud, cluster, seed_idx, planes, i, constraints, rng, block=64):
    pts = cloud.points
    members = cluster.member_indices
    candidates = np.setdiff1d(members, seed_idx, assume_unique=True)
    candidates = candidates[rng.permutation(len(candidates))]
    acc = _PlaneAccumulator(pts[seed_idx], pts[seed_idx].mean(axis=0))
    accepted = [np.asarray(seed_idx)]
    ref = cluster.seed_model.normal
    others = [p for k, p in enumerate(planes) if k != i]
    model = _oriented(acc.model(), ref)
    pos = 0
    while pos < len(candidates):
        size = max(block, acc.n // 2)
        chunk = candidates[pos:pos + size]
        pos += len(chunk)
        near = chunk[np.abs(model.signed_distance(pts[chunk])) < constraints.inlier_distance]
        while len(near):
            normals = acc.prefix_normals(pts[near])
            bad = np.flatnonzero(~_others_ok(normals, others, constraints))
            stop = bad[0] if len(bad) else len(near)
            if stop:
                acc.add(pts[near[:stop]])
                accepted.append(near[:stop])
            near = near[stop + 1:]
        model = _oriented(acc.model(), ref)
        assert check_constraints(others + [model], constraints)
    return np.sort(np.concatenate(accepted)), model


def _polish(points: np.ndarray, model: PlaneModel, constraints, ref, rounds=5):
    """Refit on robust inliers so exact data yields an exact plane."""
    scale = np.ptp(points, axis=0).max()
    floor = 1e-12 * max(scale, 1.0)
    keep = np.ones(len(points), dtype=bool)
    for _ in range(rounds):
        r = np.abs(model.signed_distance(points))
        sigma = 1.4826 * np.median(r)
        thr = min(constraints.inlier_distance, max(3.0 * sigma, floor))
        new_keep = r <= thr
        if new_keep.sum() < 3:
            break
        try:
            model = _oriented(fit_plane(points[new_keep]), ref)
        except DegenerateSet:
            break
        if np.array_equal(new_keep, keep):
            break
        keep = new_keep
    return model


def detect_marker_planes(cloud: PointCloud, constraints: MarkerConstraints,
                         rng_seed: int = 0, sample_size: int = 20,
                         max_restarts: int = 500) -> List[PlaneModel]:
    """Constraint-checked RANSAC producing one plane per visible marker face."""
    clusters = cluster_faces(cloud, constraints, rng_seed)
    rng = np.random.default_rng(rng_seed)
    pts = cloud.points

    for _ in range(max_restarts):
        seeds, planes = [], []
        for c in clusters:
            k = min(sample_size, len(c))
            idx = np.sort(rng.choice(c.member_indices, size=k, replace=False))
            seeds.append(idx)
            try:
                planes.append(_oriented(fit_plane(pts[idx]), c.seed_model.normal))
            except DegenerateSet:
                planes = None
                break
        if planes is not None and check_constraints(planes, constraints):
            break
    else:
        raise ConstraintsUnsatisfiable(
            f"no constraint-satisfying sample after {max_restarts} restarts")

    for i, c in enumerate(clusters):
        _, planes[i] = _grow(cloud, c, seeds[i], planes, i, constraints, rng)

    grown = list(planes)
    for i, c in enumerate(clusters):
        planes[i] = _polish(pts[c.member_indices], planes[i], constraints,
                            c.seed_model.normal)
    if not check_constraints(planes, constraints):
        planes = grown
    return planes


def inlier_ratio(cloud: PointCloud, cluster: FaceCluster, plane: PlaneModel,
                 distance: float) -> float:
    d = np.abs(plane.signed_distance(cloud.points[cluster.member_indices]))
    return float(np.mean(d < distance))
