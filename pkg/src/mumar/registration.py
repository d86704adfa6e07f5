"""Multi-view registration of marker plane models.

Views are registered in sliding windows of consecutive views. Inside a
window every view in turn is the Data and the mean plane models of the
other views are the Scene; the rotation comes from the normals alone and
the translation from projecting Data centroids onto the Scene planes.
Window transforms are propagated to the views outside the window, and a
growing per-plane history of committed views is used to pull each window
back onto everything registered before it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .correspondence import CorrespondenceTable, MatchParams, ViewPlanes, build_table, match_planes
from .errors import EmptyInput, EmptyScene, LengthMismatch, NotConverged
from .geometry import (PlaneModel, PointCloud, RigidTransform, angle_between, apply_transform,
                       compose, inverse, rotation_from_normals)
from .icp import IcpOptions, cloud_with_normals, icp_point_to_plane

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationOptions:
    n_window: int = 4
    max_iters: int = 50
    rot_tol: float = 0.01
    trans_tol: Optional[float] = None
    pairwise_init: bool = True
    icp_fallback: bool = True
    scene_adjust: bool = True
    marker_edge: float = 1.0
    max_normal_angle: float = 20.0
    max_centroid_dist: Optional[float] = None
    lookback: int = 2
    fallback_rejection: float = 0.7

    def __post_init__(self):
        if self.n_window < 2:
            raise ValueError("n_window must be >= 2")

    @property
    def translation_tolerance(self) -> float:
        return self.trans_tol if self.trans_tol is not None else 1e-4 * self.marker_edge

    @property
    def match_params(self) -> MatchParams:
        dist = self.max_centroid_dist
        if dist is None:
            dist = 0.3 * self.marker_edge
        return MatchParams(self.max_normal_angle, dist)


@dataclass
class WindowReport:
    window: List[int]
    errors: List[Tuple[float, float]]
    converged: bool
    deltas: Dict[int, RigidTransform]
    fallback_icp_used: bool = False
    rank_deficient: bool = False
    initialized: bool = False
    reverted: int = 0

    @property
    def iterations(self) -> int:
        """Refinement sweeps run (the pairwise initialisation is not counted)."""
        return len(self.errors) - 1 - int(self.initialized)


@dataclass
class RegistrationReport:
    transforms: List[RigidTransform]
    errors: List[Tuple[float, float]] = field(default_factory=list)
    converged: bool = True
    fallback_icp_used: bool = False
    windows: List[WindowReport] = field(default_factory=list)
    backend: str = "mumar"
    structure: Optional["SceneStructure"] = None

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "converged": self.converged,
            "fallback_icp_used": self.fallback_icp_used,
            "n_views": len(self.transforms),
            "transforms": [t.matrix.tolist() for t in self.transforms],
            "errors": [list(e) for e in self.errors],
            "windows": [
                {"window": w.window, "converged": w.converged, "iterations": w.iterations,
                 "errors": [list(e) for e in w.errors], "initialized": w.initialized,
                 "fallback_icp_used": w.fallback_icp_used, "reverted": w.reverted,
                 "rank_deficient": w.rank_deficient}
                for w in self.windows
            ],
        }


@dataclass
class SceneStructure:
    """Append-only per-plane history of ``(centroid, normal, view_index)``."""

    rows: List[List[Tuple[np.ndarray, np.ndarray, int]]] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def row_models(self) -> List[PlaneModel]:
        return [_mean_plane([PlaneModel(n, c) for c, n, _ in row]) for row in self.rows]

    def transformed(self, t: RigidTransform) -> "SceneStructure":
        return SceneStructure([[(t.apply(c), t.rotation @ n, v) for c, n, v in row]
                               for row in self.rows])


def _mean_plane(planes: Sequence[PlaneModel]) -> PlaneModel:
    n = np.mean([p.normal for p in planes], axis=0)
    c = np.mean([p.centroid for p in planes], axis=0)
    return PlaneModel(n / np.linalg.norm(n), c)


def scene_model(table: CorrespondenceTable, planes: Dict[int, List[PlaneModel]],
                exclude_view: int) -> List[Tuple[int, PlaneModel]]:
    """Mean plane of every row over the window's views other than ``exclude_view``."""
    if exclude_view not in table.columns:
        raise ValueError(f"view {exclude_view} not in window {table.columns}")
    out = []
    for r, cells in enumerate(table.rows):
        others = [planes[v][i] for v, i in cells.items() if v != exclude_view]
        if others:
            out.append((r, _mean_plane(others)))
    if not out:
        raise EmptyScene(f"no plane seen outside view {exclude_view}")
    return out


def register_view_to_scene(data: Sequence[PlaneModel], scene: Sequence[PlaneModel]):
    """Transform aligning paired Data planes onto Scene planes.

    Returns ``(transform, rank_deficient)``. The translation moves the
    rotated Data centroids onto their projections on the Scene planes,
    averaging the projection offsets per direction covered by the normals.
    """
    if len(data) != len(scene):
        raise LengthMismatch(f"{len(data)} data vs {len(scene)} scene planes")
    if not data:
        raise EmptyInput("no plane pairs to register")
    dn = np.array([p.normal for p in data])
    sn = np.array([p.normal for p in scene])
    rot, rank_deficient = rotation_from_normals(dn, sn)
    c = np.array([p.centroid for p in data]) @ rot.rotation.T
    sc = np.array([p.centroid for p in scene])
    offsets = np.sum((sc - c) * sn, axis=1)
    # sum of (projection - centroid) over pairs, normalised by normal coverage
    coverage = sn.T @ sn
    target = sn.T @ offsets
    t, *_ = np.linalg.lstsq(coverage, target, rcond=1e-9)
    return RigidTransform(rot.rotation, t), rank_deficient


def registration_error(table: CorrespondenceTable,
                       planes: Dict[int, List[PlaneModel]]) -> Tuple[float, float]:
    """Window alignment error: summed normal angles and centroid-to-plane
    distances of each view against the mean of the others, averaged over views.
    """
    rot = trans = 0.0
    for cells in table.rows:
        if len(cells) < 2:
            continue
        for v, i in cells.items():
            others = _mean_plane([planes[u][k] for u, k in cells.items() if u != v])
            mine = planes[v][i]
            rot += angle_between(mine.normal, others.normal)
            trans += abs(float(others.signed_distance(mine.centroid)))
    n = len(table.columns)
    return rot / n, trans / n


def _pairs_for_view(table, planes, view):
    data, scene = [], []
    for r, model in scene_model(table, planes, view):
        i = table.cell(r, view)
        if i is not None:
            data.append(planes[view][i])
            scene.append(model)
    return data, scene


def _fallback_icp(view, window, clouds, transforms, opts: RegistrationOptions):
    """Refine one view against the other window views' marker clouds.

    ``clouds`` are in the window's starting pose; ``transforms`` are the
    window-local updates accumulated so far.
    """
    if clouds is None or clouds.get(view) is None:
        return None
    others = [apply_transform(transforms[u], clouds[u]) for u in window
              if u != view and clouds.get(u) is not None]
    if not others:
        return None
    scene = PointCloud.concatenate(others)
    icp_opts = IcpOptions(rejection_fraction=opts.fallback_rejection, use_boundaries=True)
    t, _ = icp_point_to_plane(clouds[view], scene, icp_opts, init=transforms[view])
    return t


def multiview_register_window(planes: Dict[int, List[PlaneModel]], window: Sequence[int],
                              opts: RegistrationOptions = RegistrationOptions(),
                              table: Optional[CorrespondenceTable] = None,
                              clouds: Optional[Dict[int, PointCloud]] = None,
                              strict: bool = True) -> WindowReport:
    """Iteratively register every window view onto the mean of the others.

    ``planes`` maps view index to that view's current plane models. The
    returned report holds each view's incremental transform for this window.
    ``clouds`` (raw marker clouds, view frame) enable the ICP fallback.
    """
    window = list(window)
    if len(window) < 2:
        raise ValueError("window needs at least two views")
    cur = {v: list(planes[v]) for v in window}
    if table is None:
        table = build_table([ViewPlanes(v, cur[v]) for v in window], opts.match_params,
                            opts.lookback)
    deltas = {v: RigidTransform.identity() for v in window}
    used_icp = rank_flag = False

    def apply(v, t):
        deltas[v] = compose(t, deltas[v])
        cur[v] = [p.transformed(t) for p in cur[v]]

    def worse(new, old):
        return any(b > a * (1 + 1e-9) + 1e-12 for a, b in zip(old, new))

    errors = [registration_error(table, cur)]
    reverted = 0
    initialized = False
    if opts.pairwise_init:
        saved = dict(cur), dict(deltas)
        for a, b in zip(window, window[1:]):
            data, scene = [], []
            for cells in table.rows:
                if a in cells and b in cells:
                    data.append(cur[b][cells[b]])
                    scene.append(cur[a][cells[a]])
            if data:
                t, deficient = register_view_to_scene(data, scene)
                if not deficient:
                    apply(b, t)
        err = registration_error(table, cur)
        if worse(err, errors[-1]):
            # an already aligned window keeps its pose
            cur, deltas = dict(saved[0]), dict(saved[1])
            reverted += 1
        else:
            errors.append(err)
            initialized = True

    converged = False
    for _ in range(opts.max_iters):
        saved = dict(cur), dict(deltas), used_icp, rank_flag
        for v in window:
            try:
                data, scene = _pairs_for_view(table, cur, v)
            except EmptyScene:
                continue
            if not data:
                continue
            t, deficient = register_view_to_scene(data, scene)
            apply(v, t)
            if deficient:
                rank_flag = True
                if opts.icp_fallback and clouds is not None:
                    refined = _fallback_icp(v, window, clouds, deltas, opts)
                    if refined is not None:
                        used_icp = True
                        apply(v, compose(refined, inverse(deltas[v])))
        err = registration_error(table, cur)
        if worse(err, errors[-1]):
            # the sweep traded one error component for the other: keep the
            # previous state, which is at the noise floor of the plane models
            cur, deltas = dict(saved[0]), dict(saved[1])
            used_icp, rank_flag = saved[2], saved[3]
            reverted += 1
            converged = True
            break
        errors.append(err)
        (r0, t0), (r1, t1) = errors[-2], errors[-1]
        small = r1 < opts.rot_tol and t1 < opts.translation_tolerance
        settled = abs(r0 - r1) < opts.rot_tol and abs(t0 - t1) < opts.translation_tolerance
        if small or settled:
            converged = True
            break

    report = WindowReport(window, errors, converged, deltas, used_icp, rank_flag,
                          initialized, reverted)
    if not converged and strict:
        raise NotConverged(f"window {window} did not converge in {opts.max_iters} iterations",
                           report)
    return report


def propagate(transforms: List[RigidTransform], window: Sequence[int],
              deltas: Dict[int, RigidTransform]) -> List[RigidTransform]:
    """Carry the window's edge updates to the views outside the window.

    Views before the window follow the first window view; views after it
    follow the last.
    """
    out = list(transforms)
    first, last = window[0], window[-1]
    for j in range(0, first):
        out[j] = compose(deltas[first], out[j])
    for j in range(last + 1, len(out)):
        out[j] = compose(deltas[last], out[j])
    return out


def window_models(table: CorrespondenceTable,
                  planes: Dict[int, List[PlaneModel]]) -> List[PlaneModel]:
    return [_mean_plane([planes[v][i] for v, i in cells.items()]) for cells in table.rows]


def scene_adjust(structure: SceneStructure, table: CorrespondenceTable,
                 planes: Dict[int, List[PlaneModel]],
                 params: MatchParams = MatchParams()) -> RigidTransform:
    """Transform registering the window's mean planes onto the structure."""
    if len(structure) == 0:
        return RigidTransform.identity()
    data_all = window_models(table, planes)
    scene_all = structure.row_models()
    pairs = match_planes(data_all, scene_all, params)
    if not pairs:
        return RigidTransform.identity()
    data = [data_all[i] for i, _ in pairs]
    scene = [scene_all[j] for _, j in pairs]
    t, deficient = register_view_to_scene(data, scene)
    if deficient:
        return RigidTransform.identity()
    return t


def commit_to_structure(structure: SceneStructure, view_index: int,
                        planes: Sequence[PlaneModel],
                        params: MatchParams = MatchParams()) -> SceneStructure:
    """Append a registered view's planes to matching rows; new rows otherwise."""
    rows = [list(r) for r in structure.rows]
    pairs = match_planes(SceneStructure(rows).row_models(), planes, params) if rows else []
    matched = set()
    for r, p in pairs:
        rows[r].append((planes[p].centroid, planes[p].normal, view_index))
        matched.add(p)
    for p, plane in enumerate(planes):
        if p not in matched:
            rows.append([(plane.centroid, plane.normal, view_index)])
    return SceneStructure(rows)


def register_sequence(views: Sequence[ViewPlanes],
                      opts: RegistrationOptions = RegistrationOptions()) -> RegistrationReport:
    """Register every view into a common frame; returns per-view transforms."""
    n = len(views)
    w = opts.n_window
    if n < 2:
        raise ValueError("need at least two views")
    w = min(w, n)
    params = opts.match_params
    transforms = [RigidTransform.identity() for _ in range(n)]
    structure = SceneStructure()
    report = RegistrationReport(transforms)
    clouds_raw = {k: v.cloud for k, v in enumerate(views)}
    have_clouds = any(c is not None for c in clouds_raw.values())

    for s in range(0, n - w + 1):
        window = list(range(s, s + w))
        planes = {k: [p.transformed(transforms[k]) for p in views[k].planes] for k in window}
        table = build_table([ViewPlanes(k, planes[k]) for k in window], params, opts.lookback)
        clouds = ({k: apply_transform(transforms[k], clouds_raw[k]) for k in window
                   if clouds_raw[k] is not None} if have_clouds else None)
        win = multiview_register_window(planes, window, opts, table, clouds, strict=False)
        report.windows.append(win)
        report.errors.extend(win.errors)
        report.converged &= win.converged
        report.fallback_icp_used |= win.fallback_icp_used
        for k in window:
            transforms[k] = compose(win.deltas[k], transforms[k])
        transforms = propagate(transforms, window, win.deltas)
        if s > 0:
            # committed views were pre-propagated; keep their history in step
            structure = structure.transformed(win.deltas[window[0]])

        if opts.scene_adjust and len(structure):
            planes = {k: [p.transformed(transforms[k]) for p in views[k].planes] for k in window}
            adj = scene_adjust(structure, table, planes, params)
            for k in range(s, n):
                transforms[k] = compose(adj, transforms[k])

        first = [p.transformed(transforms[s]) for p in views[s].planes]
        structure = commit_to_structure(structure, s, first, params)
        log.debug("window %s: %d iterations, error %s", window, win.iterations, win.errors[-1])

    for k in range(n - w + 1, n):
        structure = commit_to_structure(
            structure, k, [p.transformed(transforms[k]) for p in views[k].planes], params)
    report.transforms = transforms
    report.structure = structure
    return report


def transform_object(object_views: Sequence[PointCloud],
                     transforms: Sequence[RigidTransform]) -> PointCloud:
    """Map every object view into the common frame and concatenate."""
    if len(object_views) != len(transforms):
        raise LengthMismatch(f"{len(object_views)} views vs {len(transforms)} transforms")
    return PointCloud.concatenate([apply_transform(t, c) for c, t in zip(object_views, transforms)])
