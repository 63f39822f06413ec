"""File formats: ASCII PLY clouds, JSON transforms/cameras/trajectories, scene-pair bundles, CSV tables."""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .scene import Camera, PointCloud, ScenePair, SymmetrySpec
from .se3 import Transform
from .transfer import DemoTrajectory


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from exc


# -- PLY --------------------------------------------------------------------------


def ply_text(cloud: PointCloud) -> str:
    has_color = cloud.colors is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    buf = _io.StringIO()
    buf.write("\n".join(lines) + "\n")
    if has_color:
        rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(int)
        for p, c in zip(cloud.points.tolist(), rgb.tolist()):
            buf.write(f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]}\n")
    else:
        for p in cloud.points.tolist():
            buf.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
    return buf.getvalue()


def write_ply(path, cloud: PointCloud) -> None:
    atomic_write_text(path, ply_text(cloud))


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY with x, y, z and optional red, green, blue vertex properties."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertex, props, in_vertex = None, [], False
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if n_vertex is None or not {"x", "y", "z"} <= set(props):
            raise ValueError(f"{path}: missing vertex element or x/y/z properties")
        data = np.loadtxt(fh, max_rows=n_vertex, ndmin=2) if n_vertex else np.empty((0, len(props)))
    if data.shape != (n_vertex, len(props)):
        raise ValueError(f"{path}: expected {n_vertex} vertices with {len(props)} properties")
    col = {name: i for i, name in enumerate(props)}
    pts = data[:, [col["x"], col["y"], col["z"]]]
    colors = None
    if {"red", "green", "blue"} <= set(props):
        colors = data[:, [col["red"], col["green"], col["blue"]]] / 255.0
    return PointCloud(pts, colors)


# -- transforms, cameras, trajectories ---------------------------------------------


def read_transform(path) -> Transform:
    return Transform.from_json(read_json(path))


def read_camera(path) -> Camera:
    return Camera.from_json(read_json(path))


def write_camera(path, camera: Camera) -> None:
    write_json(path, camera.to_json())


def read_trajectory(path) -> DemoTrajectory:
    return DemoTrajectory.from_json(read_json(path))


def write_trajectory(path, demo: DemoTrajectory) -> None:
    write_json(path, demo.to_json())


# -- scene-pair bundles ---------------------------------------------------------------


def pair_manifest(pair: ScenePair, demo_ply: str, test_ply: str, extra: Optional[dict] = None) -> dict:
    out = {
        "object_id": pair.object_id,
        "category": pair.category,
        "demo_cloud": demo_ply,
        "test_cloud": test_ply,
        "true_delta_camera": pair.true_delta_camera.to_json(),
        "object_pose_demo": pair.object_pose_demo.to_json(),
        "object_pose_test": pair.object_pose_test.to_json(),
        "symmetry": pair.symmetry.to_json(),
        "camera": pair.camera.to_json(),
    }
    if extra:
        out.update(extra)
    return out


def write_pair_bundle(directory, stem: str, pair: ScenePair, extra: Optional[dict] = None) -> Path:
    """Write ``<stem>.json`` plus ``<stem>_demo.ply`` / ``<stem>_test.ply`` into ``directory``."""
    directory = Path(directory)
    demo_name, test_name = f"{stem}_demo.ply", f"{stem}_test.ply"
    write_ply(directory / demo_name, pair.demo_cloud)
    write_ply(directory / test_name, pair.test_cloud)
    manifest = directory / f"{stem}.json"
    write_json(manifest, pair_manifest(pair, demo_name, test_name, extra))
    return manifest


def read_pair_bundle(manifest_path) -> ScenePair:
    manifest_path = Path(manifest_path)
    m = read_json(manifest_path)
    base = manifest_path.parent
    try:
        return ScenePair(
            read_ply(base / m["demo_cloud"]),
            read_ply(base / m["test_cloud"]),
            Camera.from_json(m["camera"]),
            true_delta_camera=Transform.from_json(m["true_delta_camera"]),
            object_pose_demo=Transform.from_json(m["object_pose_demo"]),
            object_pose_test=Transform.from_json(m["object_pose_test"]),
            symmetry=SymmetrySpec.from_json(m["symmetry"]),
            category=m.get("category", ""),
            object_id=m.get("object_id", ""),
        )
    except KeyError as exc:
        raise ValueError(f"{manifest_path}: missing field {exc}") from exc


# -- CSV ----------------------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence], seed: Optional[int] = None) -> str:
    buf = _io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], seed: Optional[int] = None) -> None:
    atomic_write_text(path, csv_text(header, rows, seed))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV, skipping ``#`` comment lines."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration as exc:
        raise ValueError(f"{path}: empty CSV") from exc
    return [h.strip() for h in header], [row for row in reader]
