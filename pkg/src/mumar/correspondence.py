"""Plane correspondences across neighbouring views.

Planes are matched on normal direction and centroid position only. The
planes x views table opens a row whenever a plane cannot be linked to an
earlier view, and leaves cells empty where a plane is not visible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import PlaneModel, PointCloud, angles_between


@dataclass
class ViewPlanes:
    view_index: int
    planes: List[PlaneModel]
    cloud: Optional[PointCloud] = None

    def __len__(self):
        return len(self.planes)


@dataclass(frozen=True)
class MatchParams:
    max_normal_angle: float = 20.0
    max_centroid_dist: float = 0.3

    @classmethod
    def for_marker_edge(cls, edge: float, max_normal_angle: float = 20.0) -> "MatchParams":
        return cls(max_normal_angle, 0.3 * edge)


def _planes(x) -> List[PlaneModel]:
    return list(x.planes) if isinstance(x, ViewPlanes) else list(x)


def match_cost(a: Sequence[PlaneModel], b: Sequence[PlaneModel], params: MatchParams):
    """Combined cost matrix plus the gate mask of admissible pairs."""
    na = np.array([p.normal for p in a]).reshape(-1, 3)
    nb = np.array([p.normal for p in b]).reshape(-1, 3)
    ca = np.array([p.centroid for p in a]).reshape(-1, 3)
    cb = np.array([p.centroid for p in b]).reshape(-1, 3)
    ang = angles_between(na[:, None, :], nb[None, :, :])
    dist = np.linalg.norm(ca[:, None, :] - cb[None, :, :], axis=-1)
    cost = ang / params.max_normal_angle + dist / params.max_centroid_dist
    ok = (ang <= params.max_normal_angle) & (dist <= params.max_centroid_dist)
    return cost, ok


def match_planes(a, b, params: MatchParams = MatchParams()) -> List[Tuple[int, int]]:
    """Greedy mutual-nearest pairing of two plane sets under gated cost.

    The cheapest remaining admissible pair is taken first, so every pair
    returned is mutually nearest among the planes still unmatched.
    """
    pa, pb = _planes(a), _planes(b)
    if not pa or not pb:
        return []
    cost, ok = match_cost(pa, pb, params)
    cost = np.where(ok, cost, np.inf)
    pairs = []
    while np.isfinite(cost).any():
        i, j = np.unravel_index(np.argmin(cost), cost.shape)
        pairs.append((int(i), int(j)))
        cost[i, :] = np.inf
        cost[:, j] = np.inf
    return sorted(pairs)


@dataclass
class CorrespondenceTable:
    """Rows are plane identities, columns view indices.

    ``rows[r][v]`` is the index of the plane of view ``v`` in that view's
    plane list; a missing key is an empty cell.
    """

    columns: List[int]
    rows: List[Dict[int, int]] = field(default_factory=list)

    def cell(self, row: int, view: int) -> Optional[int]:
        return self.rows[row].get(view)

    def row_of(self, view: int, plane_index: int) -> Optional[int]:
        for r, cells in enumerate(self.rows):
            if cells.get(view) == plane_index:
                return r
        return None

    def models(self, views: Sequence[ViewPlanes]) -> List[List[Optional[PlaneModel]]]:
        """The table as a grid of plane models (``None`` for empty cells)."""
        by_index = {v.view_index: v for v in views}
        return [[by_index[c].planes[cells[c]] if c in cells else None for c in self.columns]
                for cells in self.rows]

    def pattern(self) -> List[List[bool]]:
        return [[c in cells for c in self.columns] for cells in self.rows]


def build_table(views: Sequence[ViewPlanes], params: MatchParams = MatchParams(),
                lookback: int = 2) -> CorrespondenceTable:
    """Link planes view by view, each view against its ``lookback`` predecessors.

    The predecessor sharing the most matched planes is used first (ties go
    to the most recent view); planes it leaves unmatched may still link
    through the other predecessors before opening a new row.
    """
    table = CorrespondenceTable([v.view_index for v in views])
    if not views:
        return table
    for p in range(len(views[0])):
        table.rows.append({views[0].view_index: p})

    for j in range(1, len(views)):
        cur = views[j]
        col = cur.view_index
        candidates = []
        for back in range(1, lookback + 1):
            if j - back < 0:
                break
            prev = views[j - back]
            candidates.append((prev, match_planes(prev, cur, params)))
        # most planes in common first; stable sort keeps recent views ahead on ties
        candidates.sort(key=lambda c: -len(c[1]))
        linked = set()
        for prev, pairs in candidates:
            for ia, ib in pairs:
                if ib in linked:
                    continue
                r = table.row_of(prev.view_index, ia)
                if r is None or col in table.rows[r]:
                    continue
                table.rows[r][col] = ib
                linked.add(ib)
        for p in range(len(cur)):
            if p not in linked:
                table.rows.append({col: p})
    return table
