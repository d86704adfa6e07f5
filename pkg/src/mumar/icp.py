"""Point-to-plane ICP with worst-match rejection and boundary filtering.

Serves as the comparison baseline and as the in-window fallback when the
plane models of a view cannot constrain the rotation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import NoCorrespondences, TooFewPoints
from .geometry import PointCloud, RigidTransform, compose, estimate_normals

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IcpOptions:
    max_iterations: int = 50
    rejection_fraction: float = 0.3
    convergence_delta: float = 1e-7
    use_boundaries: bool = True
    boundary_k: int = 12
    normal_k: int = 12

    def __post_init__(self):
        if not 0 <= self.rejection_fraction < 1:
            raise ValueError("rejection_fraction must lie in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def _tangent_basis(normals: np.ndarray):
    helper = np.where(np.abs(normals[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    u = np.cross(normals, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(normals, u)
    return u, v


def detect_boundaries(cloud: PointCloud, k: int = 12, max_gap: float = 120.0) -> np.ndarray:
    """Mask of points whose neighbourhood leaves an angular gap above ``max_gap``.

    Neighbours are projected onto the point's tangent plane; a point deep
    inside a surface is surrounded on all sides, an edge point is not.
    """
    pts = cloud.points
    if len(pts) <= k:
        raise TooFewPoints(f"{len(pts)} points, need more than k={k}")
    if cloud.normals is None:
        cloud = estimate_normals(cloud, max(k, 3))
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    d = pts[idx[:, 1:]] - pts[:, None, :]
    u, v = _tangent_basis(cloud.normals)
    ang = np.arctan2(np.einsum("nkj,nj->nk", d, v), np.einsum("nkj,nj->nk", d, u))
    ang.sort(axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = ang[:, 0] + 2 * np.pi - ang[:, -1]
    widest = np.maximum(gaps.max(axis=1), wrap)
    return widest > np.radians(max_gap)


def _step(p, q, n) -> RigidTransform:
    """Linearised point-to-plane update for the current pairs."""
    a = np.hstack([np.cross(p, n), n])
    b = -np.sum((p - q) * n, axis=1)
    x, *_ = np.linalg.lstsq(a, b, rcond=1e-10)
    rot = Rotation.from_rotvec(x[:3]).as_matrix()
    return RigidTransform(rot, x[3:])


class _Target:
    """Scene cloud prepared once for repeated nearest-neighbour queries."""

    def __init__(self, scene: PointCloud, opts: IcpOptions):
        if scene.normals is None:
            raise ValueError("scene cloud needs normals for point-to-plane ICP")
        self.points = scene.points
        self.normals = scene.normals
        self.tree = cKDTree(self.points)
        self.boundary = (detect_boundaries(scene, opts.boundary_k)
                         if opts.use_boundaries else np.zeros(len(scene), bool))


def _pairs(p, target: _Target, data_boundary, opts):
    _, idx = target.tree.query(p)
    q = target.points[idx]
    n = target.normals[idx]
    keep = ~(data_boundary | target.boundary[idx])
    r = np.sum((p - q) * n, axis=1)
    keep_idx = np.flatnonzero(keep)
    n_keep = int(np.floor(len(keep_idx) * (1.0 - opts.rejection_fraction)))
    if n_keep < 6:
        raise NoCorrespondences("rejection left fewer than 6 correspondences")
    order = np.argsort(np.abs(r[keep_idx]), kind="stable")[:n_keep]
    sel = np.sort(keep_idx[order])
    return sel, q[sel], n[sel], r[sel]


def icp_point_to_plane(data: PointCloud, scene: PointCloud, opts: IcpOptions = IcpOptions(),
                       init: Optional[RigidTransform] = None,
                       _target: Optional[_Target] = None) -> Tuple[RigidTransform, List[float]]:
    """Register ``data`` onto ``scene``; returns the transform and RMS trace."""
    target = _target or _Target(scene, opts)
    t = init or RigidTransform.identity()
    if opts.use_boundaries:
        data_boundary = detect_boundaries(data, opts.boundary_k)
    else:
        data_boundary = np.zeros(len(data), bool)
    scale = max(np.ptp(target.points, axis=0).max(), 1e-300)

    trace: List[float] = []
    best_t, best_rms = t, np.inf
    for it in range(opts.max_iterations):
        p_all = t.apply(data.points)
        sel, q, n, r = _pairs(p_all, target, data_boundary, opts)
        rms = float(np.sqrt(np.mean(r ** 2)))
        if rms > best_rms:
            t = best_t
            break
        trace.append(rms)
        improved = best_rms - rms
        best_t, best_rms = t, rms
        if rms <= 1e-12 * scale or improved < opts.convergence_delta:
            break
        t = compose(_step(p_all[sel], q, n), t)
    return best_t, trace


def cloud_with_normals(cloud: PointCloud, k: int = 12, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    if cloud.normals is not None:
        return cloud
    return estimate_normals(cloud, k, viewpoint)


def icp_register_sequence(clouds: Sequence[PointCloud], opts: IcpOptions = IcpOptions(),
                          viewpoints: Optional[Sequence] = None) -> List[RigidTransform]:
    """Chain pairwise registrations: view i onto view i-1 in the common frame.

    Each registration starts from the previous view's absolute transform.
    """
    if len(clouds) < 2:
        raise ValueError("need at least two views")
    vps = viewpoints if viewpoints is not None else [(0.0, 0.0, 0.0)] * len(clouds)
    with_n = [cloud_with_normals(c, opts.normal_k, vp) for c, vp in zip(clouds, vps)]
    transforms = [RigidTransform.identity()]
    for i in range(1, len(clouds)):
        prev = transforms[-1]
        scene = PointCloud(prev.apply(with_n[i - 1].points), prev.apply_vectors(with_n[i - 1].normals))
        t, trace = icp_point_to_plane(with_n[i], scene, opts, init=prev)
        log.debug("icp view %d: %d iterations, rms %.3g", i, len(trace), trace[-1])
        transforms.append(t)
    return transforms
