"""End-to-end runs: plane detection, registration and object evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .correspondence import ViewPlanes
from .errors import ConstraintsUnsatisfiable, MumarError
from .evaluation import DistanceStats, directed_distance_stats, fine_align
from .geometry import PointCloud, RigidTransform, estimate_normals
from .icp import IcpOptions, icp_register_sequence
from .planes import MarkerConstraints, detect_marker_planes
from .registration import (RegistrationOptions, RegistrationReport, register_sequence,
                           transform_object)
from .synth import Mesh, SyntheticView

log = logging.getLogger(__name__)

NORMAL_K = 20


def detect_view_planes(view: SyntheticView, constraints: MarkerConstraints,
                       rng_seed: int = 0, normal_k: int = NORMAL_K) -> ViewPlanes:
    """Detect the marker planes of one view (all markers concatenated)."""
    planes, clouds = [], []
    for m, cloud in enumerate(view.marker_clouds):
        with_n = estimate_normals(cloud, normal_k, view.viewpoint)
        seed = rng_seed * 1_000_003 + view.view_index * 1009 + m
        try:
            planes.extend(detect_marker_planes(with_n, constraints, seed))
        except ConstraintsUnsatisfiable as exc:
            raise ConstraintsUnsatisfiable(
                f"view {view.view_index}, marker {m}: {exc}", view=view.view_index) from exc
        clouds.append(with_n)
    cloud = PointCloud.concatenate(clouds) if clouds else None
    return ViewPlanes(view.view_index, planes, cloud)


def run_mumar(views: Sequence[SyntheticView], constraints: MarkerConstraints,
              opts: RegistrationOptions = RegistrationOptions(),
              rng_seed: int = 0) -> Tuple[RegistrationReport, PointCloud]:
    vps = [detect_view_planes(v, constraints, rng_seed) for v in views]
    log.info("detected %d planes over %d views", sum(len(v) for v in vps), len(vps))
    report = register_sequence(vps, opts)
    merged = transform_object([v.object_cloud for v in views], report.transforms)
    return report, merged


def run_icp(views: Sequence[SyntheticView], opts: IcpOptions = IcpOptions(),
            source: str = "object") -> Tuple[RegistrationReport, PointCloud]:
    """Baseline: chain point-to-plane ICP over the object clouds (or whole scenes)."""
    if source == "object":
        clouds = [v.object_cloud for v in views]
    elif source == "scene":
        clouds = [PointCloud.concatenate(v.clouds) for v in views]
    else:
        raise ValueError(f"unknown ICP source {source!r}")
    transforms = icp_register_sequence(clouds, opts, [v.viewpoint for v in views])
    report = RegistrationReport(transforms, backend="icp")
    merged = transform_object([v.object_cloud for v in views], transforms)
    return report, merged


@dataclass
class ObjectEvaluation:
    stats: DistanceStats
    aligned: PointCloud
    alignment: RigidTransform


def evaluate_object(merged: PointCloud, reference: Mesh, align: bool = True) -> ObjectEvaluation:
    if align:
        aligned, t = fine_align(merged, reference)
    else:
        aligned, t = merged, RigidTransform.identity()
    return ObjectEvaluation(directed_distance_stats(aligned, reference), aligned, t)
