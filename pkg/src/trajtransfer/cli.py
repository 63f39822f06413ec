"""Command-line entry point: ``trajtransfer <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 estimator failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bench, io
from .estimators import EstimatorSuite, estimator_seed, parse_estimator_id, run_estimator
from .exceptions import EstimationError, TrajTransferError
from .scene import Correspondences, ScenePair
from .se3 import change_delta_frame
from .sensitivity import SuccessProfile, sigmoid_fixture
from .transfer import transfer_trajectory

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATOR = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--config", type=Path, default=None, help="JSON configuration file")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="trajtransfer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-dataset", parents=[common], help="generate scene-pair bundles")
    g.add_argument("--out", type=Path, required=True, help="output directory")

    b = sub.add_parser("run-benchmark", parents=[common], help="evaluate estimators on a dataset")
    b.add_argument("--dataset", type=Path, required=True)
    b.add_argument("--estimators", default="icp,corr-svd,template-z,template-z+bias")
    b.add_argument("--out", type=Path, required=True, help="summary CSV")
    b.add_argument("--raw-out", type=Path, default=None, help="per-pair CSV (default: <out>_raw.csv)")

    s = sub.add_parser("run-sensitivity", parents=[common], help="Monte-Carlo sensitivity sweeps and success curves")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--profile", type=Path, help="CSV with eef_position_error_m,success_rate")
    src.add_argument("--fixture", choices=["sigmoid"], help="use a synthetic success profile")
    s.add_argument("--out-dir", type=Path, required=True)
    s.add_argument("--distance", type=float, default=None, help="camera distance for the curves (m)")

    t = sub.add_parser("transfer-demo", parents=[common], help="transfer a demonstration to a test observation")
    t.add_argument("--demo", type=Path, required=True, help="demo trajectory JSON")
    t.add_argument("--pair", type=Path, help="scene-pair manifest (clouds, camera and ground truth)")
    t.add_argument("--demo-cloud", type=Path)
    t.add_argument("--test-cloud", type=Path)
    t.add_argument("--camera", type=Path, help="camera JSON with intrinsics and extrinsic")
    t.add_argument("--matches", type=Path, help="CSV sx,sy,sz,tx,ty,tz for corr-svd")
    t.add_argument("--estimator", default="icp")
    t.add_argument("--out", type=Path, required=True)

    q = sub.add_parser("spatial-grid", parents=[common], help="per-quadrant success around a fixed demonstration")
    q.add_argument("--estimator", default="icp")
    q.add_argument("--out", type=Path, required=True)
    q.add_argument("--category", default=None)
    q.add_argument("--object-seed", type=int, default=None)
    q.add_argument("--trials", type=int, default=None, help="placements per quadrant")
    q.add_argument("--tolerance-m", type=float, default=None)
    q.add_argument("--tolerance-deg", type=float, default=None)
    return parser


def _load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    cfg = io.read_json(path)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: configuration must be a JSON object")
    return cfg


def _suite(cfg: dict) -> EstimatorSuite:
    return EstimatorSuite.from_json(cfg.get("estimators"))


def _fmt(mean_sd: tuple[float, float]) -> str:
    return f"{mean_sd[0]:.1f} +- {mean_sd[1]:.1f}"


def cmd_gen_dataset(args, cfg) -> int:
    config = bench.DatasetConfig.from_json(cfg.get("dataset"))
    manifest = bench.generate_dataset(config, args.out, args.seed, args.threads)
    print(f"wrote {manifest['pair_count']} pairs for {config.n_objects} objects to {args.out}")
    return EXIT_OK


def cmd_run_benchmark(args, cfg) -> int:
    names = [n.strip() for n in args.estimators.split(",") if n.strip()]
    if not names:
        raise UsageError("no estimators given")
    for n in names:
        parse_estimator_id(n)
    if not (args.dataset / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset manifest in {args.dataset}")
    report = bench.run_benchmark(args.dataset, names, args.seed, args.threads, _suite(cfg))
    raw_out = args.raw_out or args.out.with_name(args.out.stem + "_raw.csv")
    io.write_csv(raw_out, bench.RAW_HEADER, report.raw, args.seed)
    io.write_csv(args.out, bench.SUMMARY_HEADER, report.summary, args.seed)
    for row in report.summary:
        if row[1] == "all":
            print(f"{row[0]:>18}: {row[3]:.2f} +- {row[4]:.2f} cm, {row[5]:.2f} +- {row[6]:.2f} deg over {row[2]} pairs")
    ref = bench.REFERENCE_RESULT
    print(f"context only: reference learned-method result, {_fmt(ref['t_err_cm'])} cm / {_fmt(ref['r_err_deg'])} deg")
    return EXIT_OK


def cmd_run_sensitivity(args, cfg) -> int:
    config = bench.SensitivityConfig.from_json(cfg.get("sensitivity"), args.seed)
    if args.distance is not None:
        config = bench.SensitivityConfig(config.sweep, float(args.distance), config.curve_samples)
    if args.fixture:
        profile = sigmoid_fixture()
        print("using SYNTHETIC sigmoid success profile (not measured data)")
    else:
        header, rows = io.read_csv(args.profile)
        profile = SuccessProfile.from_rows(header, rows, label=str(args.profile))
    results = bench.run_sensitivity(config, profile, args.out_dir, args.threads)
    for target, res in results.items():
        print(f"{target}: success {res['curve'][0]:.3f} at zero noise, {res['curve'][-1]:.3f} at {res['magnitudes'][-1]:.4g}")
    return EXIT_OK


def _read_matches(path: Path) -> Correspondences:
    header, rows = io.read_csv(path)
    want = ["sx", "sy", "sz", "tx", "ty", "tz"]
    if header[:6] != want:
        raise ValueError(f"{path}: header must be {','.join(want)}")
    try:
        data = np.array([[float(v) for v in r[:6]] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from exc
    return Correspondences(data[:, :3], data[:, 3:])


def transfer_demo(
    demo_path: Path,
    estimator: str,
    pair: ScenePair,
    seed: int = 0,
    suite: EstimatorSuite = EstimatorSuite(),
    matches: Optional[Correspondences] = None,
    has_truth: bool = True,
) -> dict:
    """Estimate the relative pose, optionally apply the z-axis bias, and transfer the trajectory."""
    demo = io.read_trajectory(demo_path)
    base, bias = parse_estimator_id(estimator)
    if base == "corr-svd" and matches is None and not has_truth:
        # without ground truth or a matcher, corresponding points share an index
        if len(pair.demo_cloud) != len(pair.test_cloud):
            raise ValueError("corr-svd needs --matches unless both clouds have the same length")
        matches = Correspondences(pair.demo_cloud.points, pair.test_cloud.points)
    est = run_estimator(estimator, pair, estimator_seed(seed, "transfer", estimator), suite, demo.poses[0], matches)
    r_delta = change_delta_frame(pair.camera.extrinsic, est.delta_camera)
    result = transfer_trajectory(demo, r_delta, bias_applied=bias)
    diag = {k: v for k, v in est.diagnostics.items()}
    diag.update({"estimator": estimator, "residual": est.residual})
    out = result.to_json()
    out["delta_camera"] = est.delta_camera.to_json()
    out["diagnostics"] = diag
    out["timestep_s"] = demo.timestep
    return out


def cmd_transfer_demo(args, cfg) -> int:
    if args.pair is not None:
        if args.demo_cloud or args.test_cloud:
            raise UsageError("give either --pair or --demo-cloud/--test-cloud, not both")
        pair = io.read_pair_bundle(args.pair)
        if args.camera is not None:
            pair = ScenePair(pair.demo_cloud, pair.test_cloud, io.read_camera(args.camera),
                             pair.true_delta_camera, pair.object_pose_demo, pair.object_pose_test,
                             pair.symmetry, pair.category, pair.object_id)
    else:
        if args.demo_cloud is None or args.test_cloud is None or args.camera is None:
            raise UsageError("--demo-cloud, --test-cloud and --camera are required without --pair")
        camera = io.read_camera(args.camera)
        demo_cloud, test_cloud = io.read_ply(args.demo_cloud), io.read_ply(args.test_cloud)
        if len(demo_cloud) == 0 or len(test_cloud) == 0:
            raise ValueError("point clouds must be non-empty")
        pair = ScenePair(demo_cloud, test_cloud, camera)
        if parse_estimator_id(args.estimator)[0] == "gt":
            raise UsageError("the gt estimator needs a --pair manifest with ground truth")
    matches = _read_matches(args.matches) if args.matches else None
    out = transfer_demo(args.demo, args.estimator, pair, args.seed, _suite(cfg), matches, args.pair is not None)
    io.write_json(args.out, out)
    print(f"wrote {len(out['poses'])} transferred poses to {args.out}")
    return EXIT_OK


def cmd_spatial_grid(args, cfg) -> int:
    grid_cfg = dict(cfg.get("spatial_grid") or {})
    for key, val in (
        ("category", args.category),
        ("object_seed", args.object_seed),
        ("trials", args.trials),
        ("tolerance_m", args.tolerance_m),
        ("tolerance_deg", args.tolerance_deg),
    ):
        if val is not None:
            grid_cfg[key] = val
    config = bench.GridConfig.from_json(grid_cfg)
    report = bench.run_spatial_grid(config, args.estimator, args.seed, args.threads, _suite(cfg))
    io.write_csv(args.out, bench.GRID_HEADER, report.rows, args.seed)
    for row in report.rows:
        print(f"quadrant {row[0]} (row {row[1]}, col {row[2]}): {row[8]:.2f} at {row[5]:.3f} m from demo")
    return EXIT_OK


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "run-benchmark": cmd_run_benchmark,
    "run-sensitivity": cmd_run_sensitivity,
    "transfer-demo": cmd_transfer_demo,
    "spatial-grid": cmd_spatial_grid,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except EstimationError as exc:
        print(f"estimator failure: {exc}; diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except (FileNotFoundError, ValueError, KeyError, TrajTransferError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
