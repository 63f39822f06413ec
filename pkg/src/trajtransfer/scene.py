"""Procedural objects, a pinhole depth camera with z-buffer visibility, and scene pairs.

Objects live in their own frame with the z-axis as the (potential) symmetry
axis and the origin at the centre of the base, so placing an object on the
table is a pose ``[Rz(yaw) | (x, y, table_z)]`` in the robot frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .exceptions import RenderError, SamplingError
from .se3 import Transform, as_rng, compose, inverse, look_at, rot_z

CATEGORIES = ("non-sym", "inf-sym", "inf-sym-geo", "n-sym", "n-sym-geo")
DEFAULT_SPACING = 0.002
MAX_SAMPLING_ATTEMPTS = 10_000


# -- value types ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points (N, 3) in metres with optional RGB colours (N, 3) in [0, 1]."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float, copy=True).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.array(self.colors, dtype=float, copy=True).reshape(-1, 3)
            if len(cols) != len(pts):
                raise ValueError(f"{len(cols)} colours for {len(pts)} points")
            cols.setflags(write=False)
            object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        if len(self.points) == 0:
            raise ValueError("centroid of an empty cloud")
        return self.points.mean(axis=0)

    def transformed(self, t: Transform) -> "PointCloud":
        return PointCloud(t.apply(self.points), self.colors)

    def subsample(self, max_points: Optional[int]) -> "PointCloud":
        """Evenly strided subset of at most ``max_points`` points (deterministic)."""
        if max_points is None or len(self) <= max_points:
            return self
        idx = np.linspace(0, len(self) - 1, max_points).round().astype(int)
        cols = None if self.colors is None else self.colors[idx]
        return PointCloud(self.points[idx], cols)


@dataclass(frozen=True)
class SymmetrySpec:
    """Rotational symmetry about the object z-axis.

    ``kind`` is ``"none"``, ``"finite"`` (with ``order >= 2``) or ``"infinite"``.
    ``geometry_only`` marks symmetric geometry under a non-symmetric texture.
    """

    kind: str = "none"
    order: int = 1
    geometry_only: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("none", "finite", "infinite"):
            raise ValueError(f"unknown symmetry kind {self.kind!r}")
        if self.kind == "finite" and self.order < 2:
            raise ValueError("finite symmetry needs order >= 2")
        if self.kind == "none" and self.order != 1:
            raise ValueError("asymmetric objects have order 1")

    @classmethod
    def none(cls) -> "SymmetrySpec":
        return cls()

    @classmethod
    def finite(cls, order: int, geometry_only: bool = False) -> "SymmetrySpec":
        return cls("finite", int(order), geometry_only)

    @classmethod
    def infinite(cls, geometry_only: bool = False) -> "SymmetrySpec":
        return cls("infinite", 0, geometry_only)

    def to_json(self) -> dict:
        return {"kind": self.kind, "order": self.order, "geometry_only": self.geometry_only}

    @classmethod
    def from_json(cls, obj: dict) -> "SymmetrySpec":
        return cls(obj["kind"], int(obj.get("order", 1)), bool(obj.get("geometry_only", False)))


@dataclass(frozen=True, eq=False)
class ObjectModel:
    category: str
    points: np.ndarray
    colors: np.ndarray
    symmetry: SymmetrySpec
    spacing: float
    seed: Optional[int] = None

    @property
    def extent(self) -> float:
        return float(np.max(self.points.max(axis=0) - self.points.min(axis=0)))

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.points, self.colors)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole intrinsics (pixels) and extrinsic ``T_RC`` (camera pose in the robot frame).

    Pixel ``(row, col)`` has its centre at image coordinates ``(v, u) = (row, col)``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Transform = field(default_factory=Transform.identity)

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 16 or self.height < 16:
            raise ValueError("resolution must be at least 16x16")

    def with_extrinsic(self, extrinsic: Transform) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, extrinsic)

    def project(self, points_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = points_c[:, 2]
        return self.fx * points_c[:, 0] / z + self.cx, self.fy * points_c[:, 1] / z + self.cy

    def in_view(self, points_c: np.ndarray) -> bool:
        """All points in front of the camera and inside the image bounds."""
        if np.any(points_c[:, 2] <= 0):
            return False
        u, v = self.project(points_c)
        return bool(
            np.all((u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5))
        )

    def to_json(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "extrinsic": self.extrinsic.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Camera":
        try:
            return cls(
                float(obj["fx"]),
                float(obj["fy"]),
                float(obj["cx"]),
                float(obj["cy"]),
                int(obj["width"]),
                int(obj["height"]),
                Transform.from_json(obj["extrinsic"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed camera description: {exc}") from exc


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned box in the robot frame; objects are placed at ``z = lo[2]`` unless the box has height."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self) -> None:
        lo, hi = tuple(map(float, self.lo)), tuple(map(float, self.hi))
        if not (hi[0] > lo[0] and hi[1] > lo[1] and hi[2] >= lo[2]):
            raise ValueError(f"degenerate workspace {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lo) + np.array(self.hi))

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= np.array(self.lo) - 1e-12) and np.all(p <= np.array(self.hi) + 1e-12))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi) if self.hi[2] > self.lo[2] else np.array(
            [rng.uniform(self.lo[0], self.hi[0]), rng.uniform(self.lo[1], self.hi[1]), self.lo[2]]
        )

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_json(cls, obj: dict) -> "Workspace":
        return cls(tuple(obj["lo"]), tuple(obj["hi"]))


@dataclass(frozen=True)
class NoiseOptions:
    """Per-point Gaussian depth noise (m, along the viewing ray) and colour jitter."""

    depth_sigma: float = 0.0
    color_jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.depth_sigma < 0 or self.color_jitter < 0:
            raise ValueError("noise levels must be non-negative")

    def to_json(self) -> dict:
        return {"depth_sigma": self.depth_sigma, "color_jitter": self.color_jitter}

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseOptions":
        return cls(float(obj.get("depth_sigma", 0.0)), float(obj.get("color_jitter", 0.0)))


DEFAULT_NOISE = NoiseOptions(depth_sigma=0.001, color_jitter=0.02)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Depth map in metres (0 or non-finite marks invalid pixels).

    ``subpixel`` optionally stores, per pixel, the (du, dv) offset of the
    rendered surface point from the pixel centre; back-projection uses it when
    present so synthetic renders round-trip exactly.
    """

    depth: np.ndarray
    colors: Optional[np.ndarray] = None
    subpixel: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ViewPair:
    """Demonstration and test observations of one object, both in the camera frame."""

    demo_cloud: PointCloud
    test_cloud: PointCloud
    camera: Camera


@dataclass(frozen=True, eq=False)
class ScenePair(ViewPair):
    true_delta_camera: Transform = field(default_factory=Transform.identity)
    object_pose_demo: Transform = field(default_factory=Transform.identity)
    object_pose_test: Transform = field(default_factory=Transform.identity)
    symmetry: SymmetrySpec = field(default_factory=SymmetrySpec)
    category: str = ""
    object_id: str = ""


@dataclass(frozen=True, eq=False)
class Correspondences:
    source: np.ndarray
    target: np.ndarray
    inlier_mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        src = np.asarray(self.source, dtype=float).reshape(-1, 3)
        dst = np.asarray(self.target, dtype=float).reshape(-1, 3)
        if len(src) != len(dst):
            raise ValueError("source and target must have equal length")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", dst)

    def __len__(self) -> int:
        return len(self.source)


# -- cameras and workspace defaults ---------------------------------------------

DEFAULT_WORKSPACE = Workspace((0.50, -0.375, 0.0), (0.80, 0.375, 0.0))
DEFAULT_CAMERA_DISTANCE = 0.8
DEFAULT_CAMERA_ELEVATION = math.radians(55.0)


def default_camera(
    distance: float = DEFAULT_CAMERA_DISTANCE,
    workspace: Workspace = DEFAULT_WORKSPACE,
    elevation: float = DEFAULT_CAMERA_ELEVATION,
) -> Camera:
    """640x480 camera looking down at the workspace centre from ``distance`` metres."""
    target = workspace.center
    eye = target + distance * np.array([-math.cos(elevation), 0.0, math.sin(elevation)])
    return Camera(500.0, 500.0, 319.5, 239.5, 640, 480, look_at(eye, target))


# -- object construction ----------------------------------------------------------


def _ring_points(radius: float, height: float, spacing: float, rng: np.random.Generator) -> np.ndarray:
    n = max(1, int(round(2 * math.pi * radius / spacing)))
    if radius < 0.5 * spacing:
        return np.array([[0.0, 0.0, height]])
    phi = rng.uniform(0.0, 2 * math.pi / n) + 2 * math.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(phi), radius * np.sin(phi), np.full(n, height)])


def _disk_points(radius: float, height: float, spacing: float, rng: np.random.Generator) -> np.ndarray:
    rings = [np.array([[0.0, 0.0, height]])]
    n_rings = int(math.floor(radius / spacing + 0.5))
    for k in range(1, n_rings + 1):
        rings.append(_ring_points(min(k * spacing, radius), height, spacing, rng))
    return np.vstack(rings)


def _revolution_points(
    profile: PchipInterpolator, height: float, spacing: float, rng: np.random.Generator
) -> np.ndarray:
    """Rings at uniform arc-length steps along the profile r(h), plus both caps."""
    h = np.linspace(0.0, height, 2000)
    r = profile(h)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(h), np.diff(r)))])
    n_rings = max(2, int(math.ceil(arc[-1] / spacing)))
    s = (np.arange(n_rings) + 0.5) * arc[-1] / n_rings
    ring_h = np.interp(s, arc, h)
    ring_r = profile(ring_h)
    parts = [_ring_points(float(rr), float(hh), spacing, rng) for rr, hh in zip(ring_r, ring_h)]
    parts.append(_disk_points(float(profile(0.0)), 0.0, spacing, rng))
    parts.append(_disk_points(float(profile(height)), height, spacing, rng))
    return np.vstack(parts)


def _random_profile(rng: np.random.Generator, extent: float) -> tuple[PchipInterpolator, float, float]:
    if rng.uniform() < 0.5:
        height = extent
        radius = 0.5 * extent * rng.uniform(0.35, 0.8)
    else:
        radius = 0.5 * extent
        height = extent * rng.uniform(0.35, 0.8)
    knots_h = np.linspace(0.0, height, 4)
    knots_r = radius * rng.uniform(0.55, 1.0, size=4)
    knots_r[int(rng.integers(4))] = radius
    return PchipInterpolator(knots_h, knots_r), height, radius


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def _ellipsoid_area(a: float, b: float, c: float) -> float:
    p = 1.6075
    return 4 * math.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3.0) ** (1.0 / p)


def _base_color(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.15, 0.85, size=3)


def _contrast_color(base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    while True:
        c = rng.uniform(0.0, 1.0, size=3)
        if np.linalg.norm(c - base) > 0.5:
            return c


def _build_revolution(rng, spacing, handle: bool, stripe: bool):
    extent = rng.uniform(0.06, 0.13) if handle else rng.uniform(0.08, 0.22)
    profile, height, radius = _random_profile(rng, extent)
    pts = _revolution_points(profile, height, spacing, rng)
    base = _base_color(rng)
    colors = np.tile(base, (len(pts), 1))
    if handle:
        h_c = height * rng.uniform(0.35, 0.65)
        r_body = float(profile(h_c))
        a = radius * rng.uniform(1.0, 1.4)
        b = radius * rng.uniform(0.3, 0.45)
        c = height * rng.uniform(0.25, 0.4)
        center = np.array([r_body + 0.7 * a, 0.0, h_c])
        n = int(math.ceil(_ellipsoid_area(a, b, c) / spacing**2))
        lobe = _fibonacci_sphere(n) * np.array([a, b, c]) + center
        lobe_r = np.hypot(lobe[:, 0], lobe[:, 1])
        lz = np.clip(lobe[:, 2], 0.0, height)
        inside_body = (lobe[:, 2] >= 0) & (lobe[:, 2] <= height) & (lobe_r < profile(lz))
        lobe = lobe[~inside_body]
        q = (pts - center) / np.array([a, b, c])
        keep = np.einsum("ij,ij->i", q, q) >= 1.0
        pts, colors = pts[keep], colors[keep]
        pts = np.vstack([pts, lobe])
        colors = np.vstack([colors, np.tile(base, (len(lobe), 1))])
    if stripe:
        width = math.radians(rng.uniform(40.0, 90.0))
        az = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * math.pi)
        colors[az < width] = _contrast_color(base, rng)
    return pts, colors


def _build_prism(rng, spacing, unique_face: bool):
    order = int(rng.choice([2, 4]))
    side = rng.uniform(0.08, 0.18)
    if order == 4:
        hx = hy = 0.5 * side
    else:
        hx = 0.5 * side
        hy = hx * rng.uniform(1.5, 2.0)
    height = rng.uniform(0.05, 0.2)
    # fundamental domain: faces (+x[, +y]) and the cap wedge between them
    corners = [np.array([hx, -hy]), np.array([hx, hy]), np.array([-hx, hy])]
    n_faces = 4 // order
    faces = []
    for k in range(n_faces):
        p0, p1 = corners[k], corners[k + 1]
        length = float(np.linalg.norm(p1 - p0))
        ne = max(1, int(round(length / spacing)))
        nh = max(1, int(round(height / spacing)))
        s = (np.arange(ne) + 0.5) / ne
        hgt = (np.arange(nh) + 0.5) / nh * height
        ss, hh = np.meshgrid(s, hgt, indexing="ij")
        xy = p0[None] + ss.reshape(-1, 1) * (p1 - p0)[None]
        faces.append(np.column_stack([xy, hh.reshape(-1)]))
    g = np.arange(-hy, hy + 1e-12, spacing) if hy >= hx else np.arange(-hx, hx + 1e-12, spacing)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    gx, gy = gx.ravel() + 0.25 * spacing, gy.ravel() + 0.25 * spacing
    inside = (np.abs(gx) < hx) & (np.abs(gy) < hy)
    start = math.atan2(corners[0][1], corners[0][0])
    stop = math.atan2(corners[n_faces][1], corners[n_faces][0])
    ang = np.mod(np.arctan2(gy, gx) - start, 2 * math.pi)
    wedge = inside & (ang < np.mod(stop - start, 2 * math.pi))
    cap_xy = np.column_stack([gx[wedge], gy[wedge]])
    caps = [np.column_stack([cap_xy, np.zeros(len(cap_xy))]), np.column_stack([cap_xy, np.full(len(cap_xy), height)])]
    fundamental = np.vstack(faces + caps)
    face0 = len(faces[0])
    base = _base_color(rng)
    pts, cols = [], []
    for j in range(order):
        pts.append(fundamental @ rot_z(2 * math.pi * j / order).T)
        c = np.tile(base, (len(fundamental), 1))
        if unique_face and j == 0:
            c[:face0] = _contrast_color(base, rng)
        cols.append(c)
    return np.vstack(pts), np.vstack(cols), order


def build_object(category: str, seed=None, spacing: float = DEFAULT_SPACING) -> ObjectModel:
    """Procedural object of one of the five symmetry categories, deterministic per seed.

    ``non-sym``: body of revolution with an off-axis lobe; ``inf-sym``: body of
    revolution in one colour; ``inf-sym-geo``: same with an angular colour
    stripe; ``n-sym``: square (order 4) or rectangular (order 2) prism;
    ``n-sym-geo``: prism with one uniquely coloured face.
    """
    if category not in CATEGORIES:
        raise ValueError(f"unknown object category {category!r}; expected one of {CATEGORIES}")
    rng = as_rng(seed)
    if category == "non-sym":
        pts, cols = _build_revolution(rng, spacing, handle=True, stripe=False)
        sym = SymmetrySpec.none()
    elif category in ("inf-sym", "inf-sym-geo"):
        geo = category == "inf-sym-geo"
        pts, cols = _build_revolution(rng, spacing, handle=False, stripe=geo)
        sym = SymmetrySpec.infinite(geometry_only=geo)
    else:
        geo = category == "n-sym-geo"
        pts, cols, order = _build_prism(rng, spacing, unique_face=geo)
        sym = SymmetrySpec.finite(order, geometry_only=geo)
    seed_val = seed if isinstance(seed, (int, np.integer)) else None
    return ObjectModel(category, pts, cols, sym, spacing, seed_val)


def sphere_model(radius: float, spacing: float = DEFAULT_SPACING, color=(0.6, 0.6, 0.6)) -> ObjectModel:
    """Fibonacci-sampled sphere centred on the object origin (a rendering test object)."""
    n = max(16, int(math.ceil(4 * math.pi * radius**2 / spacing**2)))
    pts = _fibonacci_sphere(n) * radius
    return ObjectModel("sphere", pts, np.tile(np.asarray(color, float), (n, 1)), SymmetrySpec.infinite(), spacing)


# -- rendering ------------------------------------------------------------------------


def _jitter_colors(colors: np.ndarray, amount: float, rng: np.random.Generator) -> np.ndarray:
    if amount <= 0:
        return colors
    value = 1.0 + amount * rng.standard_normal((len(colors), 1))
    tint = 0.5 * amount * rng.standard_normal((len(colors), 3))
    return np.clip(colors * value + tint, 0.0, 1.0)


def render_depth(
    model: ObjectModel,
    object_pose: Transform,
    camera: Camera,
    noise: NoiseOptions = NoiseOptions(),
    seed=None,
) -> DepthImage:
    """Z-buffer render of the model's surface points at ``object_pose`` (``T_CO``).

    Occlusion uses a depth map where each point is splatted over a footprint
    matching the surface sampling density; a point is visible if it is within
    two sampling spacings of that map at its own pixel, and the nearest
    visible point wins each pixel.
    """
    rng = as_rng(seed)
    pts = object_pose.apply(model.points)
    z = pts[:, 2]
    if np.all(z <= 0):
        raise RenderError("object is entirely behind the camera")
    if np.any(z <= 0):
        raise RenderError("object crosses the camera plane; all points need positive depth")
    u, v = camera.project(pts)
    col = np.floor(u + 0.5).astype(np.int64)
    row = np.floor(v + 0.5).astype(np.int64)
    w, h = camera.width, camera.height
    own = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    if not np.any(own):
        raise RenderError("no surface point projects into the image")

    f = max(camera.fx, camera.fy)
    half = int(min(6, max(0, math.ceil(0.75 * model.spacing * f / float(z.min()) - 0.5))))
    zbuf = np.full(w * h, np.inf)
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            rr, cc = row + dr, col + dc
            ok = (cc >= 0) & (cc < w) & (rr >= 0) & (rr < h)
            np.minimum.at(zbuf, rr[ok] * w + cc[ok], z[ok])

    idx = np.nonzero(own)[0]
    pid = row[idx] * w + col[idx]
    visible = z[idx] <= zbuf[pid] + 2.0 * model.spacing
    idx, pid = idx[visible], pid[visible]
    order = np.lexsort((z[idx], pid))
    idx, pid = idx[order], pid[order]
    first = np.concatenate([[True], pid[1:] != pid[:-1]])
    idx, pid = idx[first], pid[first]
    if len(idx) == 0:
        raise RenderError("empty visible set")

    depth = np.zeros(w * h)
    depth[pid] = z[idx]
    if noise.depth_sigma > 0:
        depth[pid] += noise.depth_sigma * rng.standard_normal(len(pid))
        bad = depth[pid] <= 0
        depth[pid[bad]] = z[idx[bad]]
    sub = np.zeros((w * h, 2))
    sub[pid, 0] = u[idx] - col[idx]
    sub[pid, 1] = v[idx] - row[idx]
    colors = np.zeros((w * h, 3))
    colors[pid] = _jitter_colors(model.colors[idx], noise.color_jitter, rng)
    return DepthImage(depth.reshape(h, w), colors.reshape(h, w, 3), sub.reshape(h, w, 2))


def backproject_depth(image: DepthImage, camera: Camera) -> PointCloud:
    """Pinhole back-projection of all valid pixels, in row-major pixel order."""
    depth = np.asarray(image.depth, dtype=float)
    valid = np.isfinite(depth) & (depth > 0)
    if not np.any(valid):
        raise RenderError("depth image has no valid pixels")
    rows, cols = np.nonzero(valid)
    z = depth[rows, cols]
    u = cols.astype(float)
    v = rows.astype(float)
    if image.subpixel is not None:
        u = u + image.subpixel[rows, cols, 0]
        v = v + image.subpixel[rows, cols, 1]
    x = (u - camera.cx) * z / camera.fx
    y = (v - camera.cy) * z / camera.fy
    colors = None if image.colors is None else np.asarray(image.colors)[rows, cols]
    return PointCloud(np.column_stack([x, y, z]), colors)


def render_partial_view(
    model: ObjectModel,
    object_pose: Transform,
    camera: Camera,
    noise: NoiseOptions = NoiseOptions(),
    seed=None,
) -> PointCloud:
    return backproject_depth(render_depth(model, object_pose, camera, noise, seed), camera)


def full_view(model: ObjectModel, object_pose: Transform, noise: NoiseOptions = NoiseOptions(), seed=None) -> PointCloud:
    """Every surface point of the model in the camera frame (no self-occlusion)."""
    rng = as_rng(seed)
    pts = object_pose.apply(model.points)
    if noise.depth_sigma > 0:
        z = pts[:, 2:3]
        pts = pts * (z + noise.depth_sigma * rng.standard_normal(z.shape)) / z
    return PointCloud(pts, _jitter_colors(model.colors, noise.color_jitter, rng))


# -- scene pairs ------------------------------------------------------------------------


def sample_scene_pair(
    model: ObjectModel,
    camera: Camera,
    workspace: Workspace = DEFAULT_WORKSPACE,
    max_z_rotation: float = math.pi / 4,
    noise: NoiseOptions = NoiseOptions(),
    seed=None,
    translation_range: Optional[float] = None,
    view: str = "partial",
    demo_position: Optional[np.ndarray] = None,
    demo_yaw: Optional[float] = None,
    object_id: str = "",
) -> ScenePair:
    """Demo pose uniform in the workspace, test pose rotated about world z and displaced.

    With ``translation_range=None`` the test position is uniform over the
    workspace; otherwise it is offset by ``U(-r, r)`` in x and y from the demo
    position, rejecting placements outside the workspace. Every placement must
    keep all surface points inside the image.
    """
    if max_z_rotation < 0:
        raise ValueError("max_z_rotation must be non-negative")
    if view not in ("partial", "full"):
        raise ValueError(f"view must be 'partial' or 'full', got {view!r}")
    rng = as_rng(seed)
    t_cr = inverse(camera.extrinsic)
    attempts = 0

    def visible(t_ro: Transform) -> bool:
        return camera.in_view(compose(t_cr, t_ro).apply(model.points))

    while True:
        attempts += 1
        if attempts > MAX_SAMPLING_ATTEMPTS:
            raise SamplingError("could not place the demo object in view of the camera")
        pos = workspace.sample(rng) if demo_position is None else np.asarray(demo_position, float)
        yaw = rng.uniform(-math.pi, math.pi) if demo_yaw is None else float(demo_yaw)
        t_ro_demo = Transform(rot_z(yaw), pos)
        if visible(t_ro_demo):
            break
        if demo_position is not None and demo_yaw is not None:
            raise SamplingError("the requested demo placement is not fully visible")

    while True:
        attempts += 1
        if attempts > MAX_SAMPLING_ATTEMPTS:
            raise SamplingError("rejection sampling of the test placement exceeded the attempt budget")
        du = rng.uniform(-max_z_rotation, max_z_rotation)
        if translation_range is None:
            new_pos = workspace.sample(rng)
        else:
            off = rng.uniform(-translation_range, translation_range, size=2)
            new_pos = t_ro_demo.translation + np.array([off[0], off[1], 0.0])
            if not workspace.contains(new_pos):
                continue
        t_ro_test = Transform(rot_z(du) @ t_ro_demo.rotation, new_pos)
        if visible(t_ro_test):
            break

    t_co_demo = compose(t_cr, t_ro_demo)
    t_co_test = compose(t_cr, t_ro_test)
    demo_seed, test_seed = rng.integers(0, 2**63 - 1, size=2)
    if view == "partial":
        demo_cloud = render_partial_view(model, t_co_demo, camera, noise, demo_seed)
        test_cloud = render_partial_view(model, t_co_test, camera, noise, test_seed)
    else:
        demo_cloud = full_view(model, t_co_demo, noise, demo_seed)
        test_cloud = full_view(model, t_co_test, noise, test_seed)
    return ScenePair(
        demo_cloud,
        test_cloud,
        camera,
        true_delta_camera=compose(t_co_test, inverse(t_co_demo)),
        object_pose_demo=t_co_demo,
        object_pose_test=t_co_test,
        symmetry=model.symmetry,
        category=model.category,
        object_id=object_id,
    )


def make_correspondences(
    pair: ScenePair,
    count: int,
    inlier_ratio: float = 1.0,
    inlier_noise_sigma: float = 0.0,
    seed=None,
) -> Correspondences:
    """Labelled synthetic matches between the demo and test clouds.

    Inliers map a demo point through the true relative pose plus Gaussian
    noise; outliers pair a demo point with a uniform point in the test cloud's
    bounding box. Order is shuffled.
    """
    if count < 3:
        raise ValueError("need at least 3 correspondences")
    if not 0.0 < inlier_ratio <= 1.0:
        raise ValueError("inlier_ratio must lie in (0, 1]")
    demo = pair.demo_cloud.points
    if count > len(demo):
        raise ValueError(f"requested {count} correspondences from {len(demo)} demo points")
    rng = as_rng(seed)
    n_in = int(round(count * inlier_ratio))
    idx = rng.choice(len(demo), size=count, replace=False)
    src = demo[idx]
    dst = np.empty_like(src)
    dst[:n_in] = pair.true_delta_camera.apply(src[:n_in])
    if inlier_noise_sigma > 0:
        dst[:n_in] += inlier_noise_sigma * rng.standard_normal((n_in, 3))
    test = pair.test_cloud.points
    dst[n_in:] = rng.uniform(test.min(axis=0), test.max(axis=0), size=(count - n_in, 3))
    mask = np.arange(count) < n_in
    perm = rng.permutation(count)
    return Correspondences(src[perm], dst[perm], mask[perm])
