"""PLY point clouds, transform text files and the per-view dataset manifest.

Dataset layout written by :func:`write_dataset`::

    manifest.json
    views/000/marker_0.ply ... marker_<m>.ply
    views/000/object.ply
    views/000/ground_truth.txt      (optional, 4x4 row-major)

Paths inside the manifest are relative to the manifest's directory.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import LengthMismatch, PlyError
from .geometry import PointCloud, RigidTransform
from .synth import SyntheticView

PathLike = Union[str, os.PathLike]

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(cloud: PointCloud, path: PathLike, binary: bool = True,
              scalars: Optional[Dict[str, np.ndarray]] = None) -> None:
    """Write ``cloud`` as a PLY vertex list.

    Coordinates and normals are stored as float64, labels as an int
    ``face_label`` property. ``scalars`` adds extra float64 per-vertex
    properties (used for distance-coloured exports).
    """
    n = len(cloud)
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    cols = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]]
    if cloud.normals is not None:
        fields += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
        cols += [cloud.normals[:, 0], cloud.normals[:, 1], cloud.normals[:, 2]]
    if cloud.labels is not None:
        fields.append(("face_label", "i4"))
        cols.append(cloud.labels)
    for name, values in (scalars or {}).items():
        values = np.asarray(values)
        if len(values) != n:
            raise LengthMismatch(f"scalar {name!r} has {len(values)} values for {n} points")
        if values.dtype == np.uint8:
            fields.append((name, "u1"))
        elif values.dtype.kind in "iu":
            fields.append((name, "i4"))
        else:
            fields.append((name, "f8"))
        cols.append(values)

    names = {"f8": "double", "f4": "float", "i4": "int", "u1": "uchar"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property {names[t]} {name}" for name, t in fields]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(n, dtype=[(f, "<" + t) for f, t in fields])
            for (f, _), c in zip(fields, cols):
                rec[f] = c
            fh.write(rec.tobytes())
        else:
            for i in range(n):
                row = []
                for (_, t), c in zip(fields, cols):
                    row.append(repr(float(c[i])) if t[0] == "f" else str(int(c[i])))
                fh.write((" ".join(row) + "\n").encode("ascii"))


def _parse_header(fh, path) -> tuple:
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyError(f"{path}: not a PLY file")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise PlyError(f"{path}: header has no end_header")
        words = line.decode("ascii", "replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "end_header":
            break
        if words[0] == "format":
            if len(words) < 2 or words[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"{path}: unsupported format {' '.join(words[1:])!r}")
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"{path}: malformed element line {line!r}")
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PlyError(f"{path}: property before any element")
            if words[1] == "list":
                if len(words) != 5 or words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise PlyError(f"{path}: malformed list property {line!r}")
                elements[-1][2].append((words[4], ("list", _PLY_TYPES[words[2]],
                                                   _PLY_TYPES[words[3]])))
            else:
                if len(words) != 3 or words[1] not in _PLY_TYPES:
                    raise PlyError(f"{path}: malformed property {line!r}")
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
        else:
            raise PlyError(f"{path}: unexpected header line {line!r}")
    if fmt is None:
        raise PlyError(f"{path}: missing format line")
    return fmt, elements


def _read_ascii(fh, path, elements) -> Dict[str, np.ndarray]:
    tokens = fh.read().split()
    pos = 0
    vertex = None
    for name, count, props in elements:
        has_list = any(isinstance(t, tuple) for _, t in props)
        if not has_list:
            width = len(props)
            need = count * width
            if pos + need > len(tokens):
                raise PlyError(f"{path}: element {name!r} declares {count} entries, "
                               f"file ends early")
            block = np.array(tokens[pos:pos + need], dtype=float).reshape(count, width)
            pos += need
            if name == "vertex":
                vertex = {p: block[:, j] for j, (p, _) in enumerate(props)}
        else:
            for _ in range(count):
                for _, t in props:
                    if isinstance(t, tuple):
                        if pos >= len(tokens):
                            raise PlyError(f"{path}: element {name!r} truncated")
                        pos += 1 + int(float(tokens[pos]))
                    else:
                        pos += 1
            if pos > len(tokens):
                raise PlyError(f"{path}: element {name!r} truncated")
    if pos != len(tokens):
        raise PlyError(f"{path}: {len(tokens) - pos} trailing values after declared elements")
    return vertex


def _read_binary(fh, path, elements) -> Dict[str, np.ndarray]:
    data = fh.read()
    pos = 0
    vertex = None
    for name, count, props in elements:
        if any(isinstance(t, tuple) for _, t in props):
            if name == "vertex":
                raise PlyError(f"{path}: list properties on vertices are not supported")
            for _ in range(count):
                for _, t in props:
                    if isinstance(t, tuple):
                        cdt = np.dtype("<" + t[1])
                        if pos + cdt.itemsize > len(data):
                            raise PlyError(f"{path}: element {name!r} truncated")
                        k = int(np.frombuffer(data, cdt, 1, pos)[0])
                        pos += cdt.itemsize + k * np.dtype(t[2]).itemsize
                    else:
                        pos += np.dtype(t).itemsize
            continue
        dt = np.dtype([(p, "<" + t) for p, t in props])
        need = dt.itemsize * count
        if pos + need > len(data):
            raise PlyError(f"{path}: element {name!r} declares {count} entries, "
                           f"file holds {(len(data) - pos) // max(dt.itemsize, 1)}")
        rec = np.frombuffer(data, dt, count, pos)
        pos += need
        if name == "vertex":
            vertex = {p: rec[p] for p, _ in props}
    if pos != len(data):
        raise PlyError(f"{path}: {len(data) - pos} trailing bytes after declared elements")
    return vertex


def read_ply_properties(path: PathLike) -> Dict[str, np.ndarray]:
    """All scalar vertex properties of a PLY file keyed by name."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh, path)
        if not any(name == "vertex" for name, _, _ in elements):
            raise PlyError(f"{path}: no vertex element")
        if fmt == "ascii":
            vertex = _read_ascii(fh, path, elements)
        else:
            vertex = _read_binary(fh, path, elements)
    return vertex


def read_ply(path: PathLike) -> PointCloud:
    props = read_ply_properties(path)
    if not all(k in props for k in "xyz"):
        raise PlyError(f"{path}: vertex element lacks x, y, z")
    pts = np.column_stack([props[k].astype(np.float64) for k in "xyz"])
    normals = None
    if all(k in props for k in ("nx", "ny", "nz")):
        normals = np.column_stack([props[k].astype(np.float64) for k in ("nx", "ny", "nz")])
    labels = props["face_label"].astype(np.int64) if "face_label" in props else None
    try:
        return PointCloud(pts, normals, labels)
    except (ValueError, LengthMismatch) as exc:
        raise PlyError(f"{path}: {exc}") from exc


def write_transform(t: RigidTransform, path: PathLike) -> None:
    np.savetxt(path, t.matrix, fmt="%.17g")


def read_transform(path: PathLike) -> RigidTransform:
    try:
        m = np.loadtxt(path, dtype=float, ndmin=2)
        return RigidTransform.from_matrix(m)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def write_dataset(views: Sequence[SyntheticView], root: PathLike, binary: bool = True) -> Path:
    """Write views as PLY files plus ``manifest.json``; returns the manifest path."""
    root = Path(root)
    entries = []
    for v in views:
        rel = Path("views") / f"{v.view_index:03d}"
        (root / rel).mkdir(parents=True, exist_ok=True)
        markers = []
        for m, cloud in enumerate(v.marker_clouds):
            p = rel / f"marker_{m}.ply"
            write_ply(cloud, root / p, binary)
            markers.append(p.as_posix())
        obj = rel / "object.ply"
        write_ply(v.object_cloud, root / obj, binary)
        entry = {"view_index": v.view_index, "markers": markers, "object": obj.as_posix(),
                 "viewpoint": [float(x) for x in v.viewpoint]}
        if v.ground_truth is not None:
            gt = rel / "ground_truth.txt"
            write_transform(v.ground_truth, root / gt)
            entry["ground_truth"] = gt.as_posix()
        entries.append(entry)
    path = root / "manifest.json"
    path.write_text(json.dumps({"views": entries}, indent=2) + "\n")
    return path


def load_manifest(path: PathLike) -> List[SyntheticView]:
    """Load the views listed in a manifest; raises ValueError on a malformed one."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    entries = doc.get("views")
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{path}: manifest lists no views")
    base = path.parent
    n_markers = len(entries[0].get("markers", []))
    has_gt = "ground_truth" in entries[0]
    views = []
    for i, e in enumerate(entries):
        if len(e.get("markers", [])) != n_markers or ("ground_truth" in e) != has_gt:
            raise ValueError(f"{path}: view entry {i} differs in structure from entry 0")
        for key in ("object",):
            if key not in e:
                raise ValueError(f"{path}: view entry {i} has no {key!r}")
        files = [base / m for m in e["markers"]] + [base / e["object"]]
        if has_gt:
            files.append(base / e["ground_truth"])
        for f in files:
            if not f.is_file():
                raise FileNotFoundError(f"{f}: referenced by {path} but missing")
        markers = [read_ply(base / m) for m in e["markers"]]
        obj = read_ply(base / e["object"])
        gt = read_transform(base / e["ground_truth"]) if has_gt else None
        vp = np.asarray(e.get("viewpoint", (0.0, 0.0, 0.0)), dtype=float)
        views.append(SyntheticView(int(e.get("view_index", i)), markers, obj, gt, vp))
    return views


def write_json(obj, path: PathLike) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
