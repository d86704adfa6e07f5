"""Distance statistics of registration results against reference geometry."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, NotConverged
from .geometry import PointCloud, RigidTransform, apply_transform, compose, inverse
from .icp import IcpOptions, icp_point_to_plane
from .synth import Mesh


@dataclass(frozen=True)
class DistanceStats:
    min: float
    max: float
    mean: float
    rms: float
    n_samples: int

    def as_row(self) -> List[float]:
        return [self.min, self.max, self.mean, self.rms, self.n_samples]


def closest_points_on_triangles(p: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Closest point on each triangle to each point, shape ``(n, t, 3)``.

    Region-based closest-point test on the triangle's vertices, edges and
    interior (Ericson, Real-Time Collision Detection, 5.1.5).
    """
    a = tris[None, :, 0]
    b = tris[None, :, 1]
    c = tris[None, :, 2]
    p = p[:, None, :]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    out = a + ab * v_in[..., None] + ac * w_in[..., None]
    # later assignments take precedence, so apply regions in reverse order

    e_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    out = np.where(e_bc[..., None], b + (c - b) * t_bc[..., None], out)
    e_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(e_ac[..., None], a + ac * t_ac[..., None], out)
    vtx_c = (d6 >= 0) & (d5 <= d6)
    out = np.where(vtx_c[..., None], c, out)
    e_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(e_ab[..., None], a + ab * t_ab[..., None], out)
    vtx_b = (d3 >= 0) & (d4 <= d3)
    out = np.where(vtx_b[..., None], b, out)
    vtx_a = (d1 <= 0) & (d2 <= 0)
    out = np.where(vtx_a[..., None], a, out)
    return np.broadcast_to(out, (p.shape[0], tris.shape[0], 3))


def point_mesh_distances(points: np.ndarray, mesh: Mesh, chunk: int = 8192) -> np.ndarray:
    tris = mesh.triangles
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        q = closest_points_on_triangles(p, tris)
        d = q - p[:, None, :]
        out[s:s + chunk] = np.sqrt(np.sum(d * d, axis=-1)).min(axis=1)
    return out


def point_cloud_distances(points: np.ndarray, reference: np.ndarray) -> np.ndarray:
    _, idx = cKDTree(reference).query(points)
    d = points - reference[idx]
    return np.sqrt(np.sum(d * d, axis=-1))


def directed_distances(result: PointCloud, reference: Union[Mesh, PointCloud]) -> np.ndarray:
    if len(result) == 0:
        raise EmptyInput("result cloud is empty")
    if isinstance(reference, Mesh):
        if len(reference.faces) == 0:
            raise EmptyInput("reference mesh is empty")
        return point_mesh_distances(result.points, reference)
    if len(reference) == 0:
        raise EmptyInput("reference cloud is empty")
    return point_cloud_distances(result.points, reference.points)


def stats_from_distances(d: np.ndarray) -> DistanceStats:
    if len(d) == 0:
        raise EmptyInput("no distances")
    return DistanceStats(float(d.min()), float(d.max()), float(d.mean()),
                         float(np.sqrt(np.mean(d * d))), int(len(d)))


def directed_distance_stats(result: PointCloud, reference: Union[Mesh, PointCloud]) -> DistanceStats:
    """Nearest-reference distance of every result point, summarised.

    ``max`` is the directed Hausdorff distance from result to reference.
    """
    return stats_from_distances(directed_distances(result, reference))


def sample_mesh(mesh: Mesh, density: float, rng_seed: int = 0) -> PointCloud:
    """Area-uniform samples with outward normals."""
    rng = np.random.default_rng(rng_seed)
    areas = mesh.triangle_areas
    counts = np.maximum(np.rint(areas * density).astype(int), 1)
    owner = np.repeat(np.arange(len(areas)), counts)
    u = np.sqrt(rng.random(len(owner)))
    v = rng.random(len(owner))
    t = mesh.triangles[owner]
    pts = (1 - u)[:, None] * t[:, 0] + (u * (1 - v))[:, None] * t[:, 1] + (u * v)[:, None] * t[:, 2]
    return PointCloud(pts, mesh.triangle_normals[owner], mesh.face_ids[owner])


def fine_align(result: PointCloud, reference: Union[Mesh, PointCloud],
               opts: Optional[IcpOptions] = None, density: float = 4000.0,
               max_start_rms: Optional[float] = None) -> Tuple[PointCloud, RigidTransform]:
    """ICP the result onto the reference before measuring shape agreement.

    Raises NotConverged when the starting pose is outside the ICP basin
    (initial RMS above ``max_start_rms``) or ICP makes no progress.
    """
    if len(result) == 0:
        raise EmptyInput("result cloud is empty")
    opts = opts or IcpOptions(rejection_fraction=0.3, use_boundaries=False, max_iterations=60)
    ref = sample_mesh(reference, density) if isinstance(reference, Mesh) else reference
    if ref.normals is None:
        from .geometry import estimate_normals
        ref = estimate_normals(ref, 12, ref.points.mean(axis=0))
    t, trace = icp_point_to_plane(result, ref, opts)
    if max_start_rms is not None and trace and trace[0] > max_start_rms:
        raise NotConverged(f"initial RMS {trace[0]:.4g} exceeds {max_start_rms:.4g}")
    return apply_transform(t, result), t


def gauge_fixed_errors(estimated: Sequence[RigidTransform],
                       truth: Sequence[RigidTransform]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-view rotation (degrees) and translation errors up to a common frame.

    Registration recovers transforms into an arbitrary common frame; the
    single rigid map between that frame and the ground-truth frame is
    fitted over all views and removed before comparing.
    """
    est = list(estimated)
    gt = list(truth)
    if len(est) != len(gt) or not est:
        raise ValueError("need equally many estimated and true transforms")
    m = sum(e.rotation @ g.rotation.T for e, g in zip(est, gt))
    u, _, vt = np.linalg.svd(m)
    r = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
    t = np.mean([e.translation - r @ g.translation for e, g in zip(est, gt)], axis=0)
    gauge = RigidTransform(r, t)
    rot, trans = [], []
    for e, g in zip(est, gt):
        d = compose(inverse(compose(gauge, g)), e)
        rot.append(d.angle_degrees)
        trans.append(np.linalg.norm(d.translation))
    return np.array(rot), np.array(trans)


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    object: str
    sigma: float
    stats: DistanceStats


def benchmark_report(rows: Iterable[BenchmarkRow], baseline: str = "icp",
                     method: str = "mumar") -> List[dict]:
    """Method x object x sigma grid with baseline/method mean-distance ratios."""
    rows = list(rows)
    means = {(r.method, r.object, r.sigma): r.stats.mean for r in rows}
    out = []
    for r in rows:
        b = means.get((baseline, r.object, r.sigma))
        m = means.get((method, r.object, r.sigma))
        ratio = (b / m) if (b is not None and m) else (1.0 if b == m and b is not None else None)
        d = {"method": r.method, "object": r.object, "sigma": r.sigma}
        d.update(asdict(r.stats))
        d["ratio"] = ratio
        out.append(d)
    return out


def format_table(report: List[dict]) -> str:
    head = f"{'Method':<8} {'Object':<15} {'Sigma':>9} {'Min':>10} {'Max':>10} {'Mean':>10} {'RMS':>10} {'Ratio':>8}"
    lines = [head, "-" * len(head)]
    for r in report:
        ratio = "" if r["ratio"] is None else f"{r['ratio']:.2f}"
        lines.append(f"{r['method']:<8} {r['object']:<15} {r['sigma']:>9.4g} {r['min']:>10.5f} "
                     f"{r['max']:>10.5f} {r['mean']:>10.5f} {r['rms']:>10.5f} {ratio:>8}")
    return "\n".join(lines)
