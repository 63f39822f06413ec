"""Experiment drivers behind the command-line interface: datasets, benchmarks, sensitivity, spatial grids."""

from __future__ import annotations

import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import io
from .estimators import EstimatorSuite, estimator_seed, parse_estimator_id, run_estimator
from .metrics import symmetry_aware_error
from .scene import (
    CATEGORIES,
    DEFAULT_WORKSPACE,
    Camera,
    NoiseOptions,
    ObjectModel,
    Workspace,
    build_object,
    default_camera,
    sample_scene_pair,
)
from .sensitivity import (
    ERROR_MAP_HEADER,
    SWEEP_HEADER,
    TARGETS,
    SuccessProfile,
    SweepConfig,
    fit_error_map,
    map_success_curve,
    remap_profile,
    run_sweep,
)

# reference learned-method result, mean +- std over all objects; printed for scale
# only, the estimators here are classical stand-ins
REFERENCE_RESULT = {"t_err_cm": (5.9, 11.2), "r_err_deg": (4.3, 10.1)}

CATEGORY_WEIGHTS = OrderedDict(
    [("non-sym", 25), ("inf-sym", 10), ("inf-sym-geo", 5), ("n-sym", 10), ("n-sym-geo", 5)]
)


def sub_seed(*parts) -> int:
    """Deterministic 63-bit integer seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map, optionally on a thread pool."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- datasets -----------------------------------------------------------------------------


def allocate_categories(n_objects: int, weights=CATEGORY_WEIGHTS) -> "OrderedDict[str, int]":
    """Largest-remainder split of ``n_objects`` in proportion to ``weights`` (earlier category wins ties)."""
    if n_objects < 0:
        raise ValueError("object count must be non-negative")
    total = sum(weights.values())
    quotas = [(c, n_objects * w / total) for c, w in weights.items()]
    counts = OrderedDict((c, int(math.floor(q))) for c, q in quotas)
    left = n_objects - sum(counts.values())
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i][1] - math.floor(quotas[i][1])), i))
    for i in order[:left]:
        counts[quotas[i][0]] += 1
    return counts


@dataclass(frozen=True)
class DatasetConfig:
    objects: "OrderedDict[str, int]" = field(default_factory=lambda: OrderedDict(CATEGORY_WEIGHTS))
    pairs_per_object: int = 20
    noise: NoiseOptions = NoiseOptions(depth_sigma=0.001, color_jitter=0.02)
    max_z_rotation_deg: float = 45.0
    translation_range: Optional[float] = None
    view: str = "partial"
    workspace: Workspace = DEFAULT_WORKSPACE
    camera: Optional[Camera] = None

    def __post_init__(self) -> None:
        unknown = set(self.objects) - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown categories {sorted(unknown)}")
        if any(n < 0 for n in self.objects.values()) or self.pairs_per_object < 1:
            raise ValueError("object counts must be >= 0 and pairs_per_object >= 1")
        if not 0 <= self.max_z_rotation_deg <= 180:
            raise ValueError("max_z_rotation_deg must lie in [0, 180]")

    @property
    def n_objects(self) -> int:
        return sum(self.objects.values())

    def get_camera(self) -> Camera:
        return self.camera if self.camera is not None else default_camera(workspace=self.workspace)

    @classmethod
    def from_json(cls, obj: Optional[dict]) -> "DatasetConfig":
        obj = dict(obj or {})
        known = {"objects", "num_objects", "pairs_per_object", "noise", "max_z_rotation_deg",
                 "translation_range", "view", "workspace", "camera"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown dataset keys {sorted(extra)}")
        if "objects" in obj and "num_objects" in obj:
            raise ValueError("give either 'objects' or 'num_objects', not both")
        if "num_objects" in obj:
            objects = allocate_categories(int(obj["num_objects"]))
        elif "objects" in obj:
            unknown = set(obj["objects"]) - set(CATEGORIES)
            if unknown:
                raise ValueError(f"unknown categories {sorted(unknown)}")
            objects = OrderedDict((c, int(obj["objects"].get(c, 0))) for c in CATEGORIES)
        else:
            objects = OrderedDict(CATEGORY_WEIGHTS)
        kwargs = {"objects": objects}
        if "pairs_per_object" in obj:
            kwargs["pairs_per_object"] = int(obj["pairs_per_object"])
        if "noise" in obj:
            kwargs["noise"] = NoiseOptions.from_json(obj["noise"])
        if "max_z_rotation_deg" in obj:
            kwargs["max_z_rotation_deg"] = float(obj["max_z_rotation_deg"])
        if obj.get("translation_range") is not None:
            kwargs["translation_range"] = float(obj["translation_range"])
        if "view" in obj:
            kwargs["view"] = str(obj["view"])
        if "workspace" in obj:
            kwargs["workspace"] = Workspace.from_json(obj["workspace"])
        if "camera" in obj:
            kwargs["camera"] = Camera.from_json(obj["camera"])
        return cls(**kwargs)

    def to_json(self) -> dict:
        return {
            "objects": dict(self.objects),
            "pairs_per_object": self.pairs_per_object,
            "noise": self.noise.to_json(),
            "max_z_rotation_deg": self.max_z_rotation_deg,
            "translation_range": self.translation_range,
            "view": self.view,
            "workspace": self.workspace.to_json(),
            "camera": self.get_camera().to_json(),
        }


def object_specs(config: DatasetConfig) -> list[tuple[int, str, str]]:
    """(object index, category, object id) in manifest order."""
    specs = []
    for cat, n in config.objects.items():
        for _ in range(n):
            idx = len(specs)
            specs.append((idx, cat, f"obj{idx:03d}_{cat}"))
    return specs


def generate_dataset(config: DatasetConfig, out_dir, seed: int = 0, threads: int = 1) -> dict:
    """Write every scene pair bundle plus ``manifest.json``; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    camera = config.get_camera()
    specs = object_specs(config)
    jobs = [(o, p) for o in range(len(specs)) for p in range(config.pairs_per_object)]
    models: dict[int, ObjectModel] = {
        i: build_object(cat, sub_seed(seed, 0, i)) for i, cat, _ in specs
    }

    def one(job):
        o, p = job
        idx, cat, oid = specs[o]
        pair = sample_scene_pair(
            models[idx],
            camera,
            config.workspace,
            math.radians(config.max_z_rotation_deg),
            config.noise,
            sub_seed(seed, 1, idx, p),
            translation_range=config.translation_range,
            view=config.view,
            object_id=oid,
        )
        stem = f"pair{p:03d}"
        io.write_pair_bundle(out_dir / oid, stem, pair, {"pair_index": p})
        return f"{oid}/{stem}.json"

    paths = parallel_map(one, jobs, threads)
    manifest = {
        "seed": int(seed),
        "config": config.to_json(),
        "objects": [
            {
                "object_id": oid,
                "category": cat,
                "symmetry": models[i].symmetry.to_json(),
                "extent_m": models[i].extent,
                "pairs": [paths[k] for k, (o, _) in enumerate(jobs) if o == i],
            }
            for i, cat, oid in specs
        ],
        "pair_count": len(paths),
    }
    io.write_json(out_dir / "manifest.json", manifest)
    return manifest


def load_dataset(dataset_dir) -> tuple[dict, list[str]]:
    dataset_dir = Path(dataset_dir)
    manifest = io.read_json(dataset_dir / "manifest.json")
    pairs = [p for obj in manifest.get("objects", []) for p in obj["pairs"]]
    return manifest, pairs


# -- benchmark ------------------------------------------------------------------------------

RAW_HEADER = ("pair", "object_id", "category", "estimator", "t_err_cm", "r_err_deg", "residual")
SUMMARY_HEADER = ("estimator", "category", "n", "mean_t_err_cm", "std_t_err_cm", "mean_r_err_deg", "std_r_err_deg")


@dataclass
class BenchmarkReport:
    raw: list[tuple]
    summary: list[tuple]
    seed: int
    config: dict

    def mean(self, estimator: str, category: str = "all", column: str = "r_err_deg") -> float:
        for row in self.summary:
            if row[0] == estimator and row[1] == category:
                return row[SUMMARY_HEADER.index("mean_" + column)]
        raise KeyError((estimator, category))


def summarize(raw: Iterable[tuple], estimators: Sequence[str]) -> list[tuple]:
    """Mean and population std per (estimator, category) plus an ``all`` row per estimator."""
    raw = list(raw)
    out = []
    for est in estimators:
        rows = [r for r in raw if r[3] == est]
        cats = [c for c in CATEGORIES if any(r[2] == c for r in rows)]
        for cat in cats + ["all"]:
            sel = [r for r in rows if cat == "all" or r[2] == cat]
            if not sel:
                continue
            t = np.array([r[4] for r in sel])
            a = np.array([r[5] for r in sel])
            out.append((est, cat, len(sel), float(t.mean()), float(t.std()), float(a.mean()), float(a.std())))
    return out


def run_benchmark(
    dataset_dir,
    estimators: Sequence[str],
    seed: int = 0,
    threads: int = 1,
    suite: EstimatorSuite = EstimatorSuite(),
) -> BenchmarkReport:
    """Every estimator on every pair; errors are symmetry-aware and expressed in the robot frame."""
    for name in estimators:
        parse_estimator_id(name)
    dataset_dir = Path(dataset_dir)
    manifest, pair_paths = load_dataset(dataset_dir)
    jobs = [(i, path, est) for i, path in enumerate(pair_paths) for est in estimators]

    def one(job):
        i, path, est = job
        pair = io.read_pair_bundle(dataset_dir / path)
        estimate = run_estimator(est, pair, estimator_seed(seed, i, est), suite)
        err = symmetry_aware_error(pair, estimate.delta_camera, frame="robot")
        return (path, pair.object_id, pair.category, est, 100.0 * err.translation, math.degrees(err.rotation), estimate.residual)

    raw = parallel_map(one, jobs, threads)
    return BenchmarkReport(raw, summarize(raw, estimators), seed, {"dataset_seed": manifest.get("seed")})


# -- spatial grid -------------------------------------------------------------------------------

GRID_HEADER = ("quadrant", "row", "col", "center_x_m", "center_y_m", "distance_from_demo_m", "trials", "successes", "success_fraction")


@dataclass(frozen=True)
class GridConfig:
    category: str = "non-sym"
    object_seed: int = 0
    rows: int = 2
    cols: int = 5
    trials: int = 50
    tolerance_m: float = 0.02
    tolerance_rad: float = math.radians(10.0)
    demo_quadrant: tuple[int, int] = (0, 2)
    max_z_rotation_deg: float = 45.0
    noise: NoiseOptions = NoiseOptions(depth_sigma=0.001, color_jitter=0.02)
    workspace: Workspace = DEFAULT_WORKSPACE

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1 or self.trials < 1:
            raise ValueError("grid needs rows, cols and trials >= 1")
        if not (0 <= self.demo_quadrant[0] < self.rows and 0 <= self.demo_quadrant[1] < self.cols):
            raise ValueError("demo quadrant outside the grid")
        if self.tolerance_m < 0 or self.tolerance_rad < 0:
            raise ValueError("tolerances must be non-negative")

    @classmethod
    def from_json(cls, obj: Optional[dict]) -> "GridConfig":
        obj = dict(obj or {})
        kwargs = {}
        for key in ("category",):
            if key in obj:
                kwargs[key] = str(obj.pop(key))
        for key in ("object_seed", "rows", "cols", "trials"):
            if key in obj:
                kwargs[key] = int(obj.pop(key))
        for key in ("tolerance_m", "max_z_rotation_deg"):
            if key in obj:
                kwargs[key] = float(obj.pop(key))
        if "tolerance_deg" in obj:
            kwargs["tolerance_rad"] = math.radians(float(obj.pop("tolerance_deg")))
        if "demo_quadrant" in obj:
            kwargs["demo_quadrant"] = tuple(int(v) for v in obj.pop("demo_quadrant"))
        if "noise" in obj:
            kwargs["noise"] = NoiseOptions.from_json(obj.pop("noise"))
        if "workspace" in obj:
            kwargs["workspace"] = Workspace.from_json(obj.pop("workspace"))
        if obj:
            raise ValueError(f"unknown spatial-grid keys {sorted(obj)}")
        return cls(**kwargs)

    def quadrant_bounds(self, row: int, col: int) -> Workspace:
        lo, hi = np.array(self.workspace.lo), np.array(self.workspace.hi)
        dx = (hi[0] - lo[0]) / self.rows
        dy = (hi[1] - lo[1]) / self.cols
        qlo = (lo[0] + row * dx, lo[1] + col * dy, lo[2])
        qhi = (lo[0] + (row + 1) * dx, lo[1] + (col + 1) * dy, hi[2])
        return Workspace(qlo, qhi)


@dataclass
class SpatialGridReport:
    rows: list[tuple]
    demo_position: np.ndarray
    tolerance_m: float
    tolerance_rad: float
    seed: int

    @property
    def fractions(self) -> np.ndarray:
        return np.array([r[-1] for r in self.rows])

    @property
    def distances(self) -> np.ndarray:
        return np.array([r[5] for r in self.rows])


def run_spatial_grid(
    config: GridConfig,
    estimator: str,
    seed: int = 0,
    threads: int = 1,
    suite: EstimatorSuite = EstimatorSuite(),
) -> SpatialGridReport:
    """Success fraction per workspace quadrant for test placements around a fixed demonstration.

    The demonstration object sits at the centre of ``demo_quadrant`` with a
    fixed yaw; each trial places the test object uniformly inside one
    quadrant with a relative z-rotation within the configured bound.
    """
    parse_estimator_id(estimator)
    model = build_object(config.category, config.object_seed)
    camera = default_camera(workspace=config.workspace)
    demo_q = config.quadrant_bounds(*config.demo_quadrant)
    demo_pos = demo_q.center
    quads = [(r, c) for r in range(config.rows) for c in range(config.cols)]
    jobs = [(q, k) for q in range(len(quads)) for k in range(config.trials)]

    def one(job):
        q, k = job
        box = config.quadrant_bounds(*quads[q])
        pair = sample_scene_pair(
            model,
            camera,
            box,
            math.radians(config.max_z_rotation_deg),
            config.noise,
            sub_seed(seed, 2, q, k),
            demo_position=demo_pos,
            demo_yaw=0.0,
            object_id=f"q{q}",
        )
        est = run_estimator(estimator, pair, estimator_seed(seed, q, k, estimator), suite)
        err = symmetry_aware_error(pair, est.delta_camera, frame="robot")
        return err.translation <= config.tolerance_m and err.rotation <= config.tolerance_rad

    ok = parallel_map(one, jobs, threads)
    rows = []
    for q, (r, c) in enumerate(quads):
        box = config.quadrant_bounds(r, c)
        succ = sum(ok[q * config.trials : (q + 1) * config.trials])
        centre = box.center
        dist = float(np.linalg.norm(centre[:2] - demo_pos[:2]))
        rows.append((q, r, c, float(centre[0]), float(centre[1]), dist, config.trials, succ, succ / config.trials))
    return SpatialGridReport(rows, demo_pos, config.tolerance_m, config.tolerance_rad, seed)


# -- sensitivity ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityConfig:
    sweep: SweepConfig = SweepConfig()
    distance: float = 0.8
    curve_samples: int = 1000

    @classmethod
    def from_json(cls, obj: Optional[dict], seed: int = 0) -> "SensitivityConfig":
        obj = dict(obj or {})
        sweep_kw = {"seed": seed}
        if "distances" in obj:
            sweep_kw["distances"] = tuple(float(d) for d in obj.pop("distances"))
        if "samples_per_cell" in obj:
            sweep_kw["samples_per_cell"] = int(obj.pop("samples_per_cell"))
        if "delta_rotation_range_deg" in obj:
            sweep_kw["delta_rotation_range"] = math.radians(float(obj.pop("delta_rotation_range_deg")))
        if "delta_translation_range" in obj:
            sweep_kw["delta_translation_range"] = float(obj.pop("delta_translation_range"))
        distance = float(obj.pop("distance", 0.8))
        samples = int(obj.pop("curve_samples", sweep_kw.get("samples_per_cell", 1000)))
        if obj:
            raise ValueError(f"unknown sensitivity keys {sorted(obj)}")
        return cls(SweepConfig(**sweep_kw), distance, samples)


CURVE_HEADER = ("magnitude", "expected_success", "map_expected_success")


def run_sensitivity(
    config: SensitivityConfig, profile: SuccessProfile, out_dir, threads: int = 1
) -> dict[str, dict]:
    """Four sweeps, fitted maps and success curves, written as CSV files into ``out_dir``."""
    out_dir = Path(out_dir)
    seed = config.sweep.seed
    t_rc = default_camera().extrinsic
    results = {}
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for target in TARGETS:
            sweep = run_sweep(config.sweep, target, t_rc, executor)
            emap = fit_error_map(sweep)
            mags, curve = map_success_curve(
                profile, target, config.distance, sweep.magnitudes, config.curve_samples, seed, t_rc, config.sweep
            )
            via_map = remap_profile(profile, emap, config.distance, mags)
            stem = target.replace("-", "_")
            io.write_csv(out_dir / f"sweep_{stem}.csv", SWEEP_HEADER, sweep.summary_rows(), seed)
            io.write_csv(out_dir / f"error_map_{stem}.csv", ERROR_MAP_HEADER, emap.rows(), seed)
            io.write_csv(out_dir / f"curve_{stem}.csv", CURVE_HEADER, zip(mags, curve, via_map), seed)
            results[target] = {"sweep": sweep, "map": emap, "magnitudes": mags, "curve": curve, "map_curve": via_map}
    finally:
        if executor is not None:
            executor.shutdown()
    return results
