"""Command-line surface wiring the pipeline stages together.

Every subcommand is file-in/file-out; all randomness flows from --seed, so a
command run twice with identical flags and inputs produces identical output.
Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr, data to files or stdout.
"""

import argparse
import os
import sys
from contextlib import nullcontext

import numpy as np

from . import io as vio
from .config import PipelineConfig
from .encode import build_db, fisher_vector, fit_gmm, pool_database_features, query_db
from .errors import ViewretError
from .evaluate import ALL_CASES, desk_benchmark_config, make_synthetic_dataset, parse_case, run_benchmark
from .features import extract_features
from .geometry import (NUM_VIEWPOINTS, TriangleMesh, dodecahedron_viewpoints, normalize_mesh,
                       normalize_pose)
from .render import render_mesh, render_point_cloud
from .scansim import ScannerConfig, simulate_scan
from .select import (best_resolution_for_viewpoint, multiview_ring, ransac_viewpoint,
                     score_grid, select_resolution, select_viewpoint)

USAGE_ERROR = 1
DATA_ERROR = 2

_CONFIG_KEYS = {
    "n_keypoints": int,
    "keypoint_decay": float,
    "gaussians": int,
    "resolutions": lambda s: tuple(int(v) for v in s.replace(",", " ").split()),
    "ransac_iterations": int,
    "ransac_tolerance": float,
    "db_resolution": int,
    "seed": int,
    "gmm_sample_cap": int,
    "threads": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_ERROR)


def _parse_vector(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected x,y,z but got {text!r}")
    return np.asarray(parts)


def _viewpoint_index(text):
    index = int(text)
    if not 0 <= index < NUM_VIEWPOINTS:
        raise argparse.ArgumentTypeError(f"viewpoint index must be in 0..{NUM_VIEWPOINTS - 1}")
    return index


def _parse_resolutions(text):
    return tuple(int(v) for v in text.split(","))


def _load_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
            values[key] = _CONFIG_KEYS[key](value.strip())
    return values


def _effective_config(args, base: PipelineConfig = None) -> PipelineConfig:
    """Defaults, overridden by --config file values, overridden by flags."""
    config = base if base is not None else PipelineConfig()
    if getattr(args, "config", None):
        config = config.override(**_load_config_file(args.config))
    overrides = {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            overrides[key] = flag
    return config.override(**overrides) if overrides else config


def _load_geometry(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file not found: {path}")
    if path.lower().endswith(".obj"):
        return vio.load_obj(path)
    return vio.load_xyz(path)


def _require(path, what="input"):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _out(args):
    if args.output:
        return open(args.output, "w", encoding="utf-8")
    return nullcontext(sys.stdout)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="viewret", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p, output="optional"):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None)
        p.add_argument("--threads", type=int, default=None)
        if output == "required":
            p.add_argument("--output", required=True)
        elif output == "optional":
            p.add_argument("--output", default=None)

    p = sub.add_parser("normalize", help="pose-normalize a point cloud")
    p.add_argument("--input", required=True)
    common(p)

    p = sub.add_parser("render", help="render a depth image to PGM")
    p.add_argument("--input", required=True)
    where = p.add_mutually_exclusive_group(required=True)
    where.add_argument("--viewpoint-index", type=_viewpoint_index, default=None)
    where.add_argument("--viewpoint", type=_parse_vector, default=None)
    p.add_argument("--resolution", type=int, required=True)
    common(p, output="required")

    p = sub.add_parser("select", help="select viewpoint and resolution for a cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--resolutions", type=_parse_resolutions, default=None)
    p.add_argument("--method", choices=("proposed", "ransac"), default="proposed")
    p.add_argument("--dump-grid", default=None)
    common(p, output=None)

    p = sub.add_parser("scan-sim", help="simulate a partial scan of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--scanner-pos", type=_parse_vector, required=True)
    p.add_argument("--target", type=_parse_vector, default=None)
    p.add_argument("--fov", type=float, default=40.0)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--max-range", type=float, default=100.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    common(p, output="required")

    p = sub.add_parser("fit-gmm", help="fit the mixture over pooled database features")
    p.add_argument("--input", required=True,
                   help="model manifest, or a binary feature dump")
    p.add_argument("--gaussians", type=int, default=None)
    common(p, output="required")

    p = sub.add_parser("build-db", help="build the descriptor database from a manifest")
    p.add_argument("--input", required=True)
    p.add_argument("--gmm", required=True)
    common(p, output="required")

    p = sub.add_parser("query", help="rank database models against a query cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--gmm", required=True)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--multiview", action="store_true",
                   help="query with the 13-view ring instead of a single view")
    p.add_argument("--resolutions", type=_parse_resolutions, default=None)
    common(p)

    p = sub.add_parser("bench", help="run the synthetic retrieval benchmark")
    p.add_argument("--cases", default=",".join(c.name for c in ALL_CASES))
    p.add_argument("--report", default=None)
    p.add_argument("--pr-data", default=None)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--scans-per-class", type=int, default=5)
    common(p, output=None)

    p = sub.add_parser("grid-dump", help="write the score grid as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--resolutions", type=_parse_resolutions, default=None)
    common(p)

    return parser


def cmd_normalize(args):
    cloud = vio.load_xyz(_require(args.input))
    points, transform = normalize_pose(cloud)
    if args.output:
        vio.save_xyz(points, args.output)
    t = transform.translation
    sys.stdout.write(f"translation {t[0]:.17g} {t[1]:.17g} {t[2]:.17g}\n")
    sys.stdout.write(f"scale {transform.scale:.17g}\n")
    return 0


def _resolve_viewpoint(args):
    if args.viewpoint_index is not None:
        return dodecahedron_viewpoints()[args.viewpoint_index]
    return args.viewpoint / np.linalg.norm(args.viewpoint)


def cmd_render(args):
    geometry = _load_geometry(args.input)
    viewpoint = _resolve_viewpoint(args)
    if isinstance(geometry, TriangleMesh):
        mesh, _ = normalize_mesh(geometry)
        img = render_mesh(mesh, viewpoint, args.resolution)
    else:
        points, _ = normalize_pose(geometry)
        img = render_point_cloud(points, viewpoint, args.resolution)
    vio.write_pgm(img, args.output)
    return 0


def cmd_select(args, config: PipelineConfig):
    cloud = vio.load_xyz(_require(args.input))
    points, _ = normalize_pose(cloud)
    resolutions = args.resolutions or config.resolutions
    views = dodecahedron_viewpoints()
    grid = score_grid(points, views, resolutions, threads=config.threads)
    if args.dump_grid:
        with open(args.dump_grid, "w", encoding="utf-8") as fh:
            vio.write_score_grid_csv(grid, fh)
    if args.method == "ransac":
        viewpoint = ransac_viewpoint(points, config.ransac_iterations,
                                     config.ransac_tolerance, seed=config.seed)
        resolution = best_resolution_for_viewpoint(points, viewpoint, resolutions)
        index = -1
        match = np.abs(views - viewpoint).sum(axis=1)
        if match.min() < 1e-9:
            index = int(match.argmin())
    else:
        viewpoint = select_viewpoint(grid, points)
        resolution = select_resolution(grid, viewpoint)
        index = int(np.abs(views - viewpoint).sum(axis=1).argmin())
    sys.stdout.write(f"viewpoint_index {index}\n")
    sys.stdout.write(f"viewpoint {viewpoint[0]:.17g} {viewpoint[1]:.17g} {viewpoint[2]:.17g}\n")
    sys.stdout.write(f"resolution {resolution}\n")
    return 0


def cmd_scan_sim(args, config: PipelineConfig):
    mesh = vio.load_obj(_require(args.mesh, "mesh"))
    target = args.target if args.target is not None else mesh.centroid
    cfg = ScannerConfig(position=args.scanner_pos, target=target,
                        fov_deg=args.fov, angular_step_deg=args.step,
                        max_range=args.max_range, noise_sigma=args.noise_sigma,
                        seed=config.seed)
    scan = simulate_scan(mesh, cfg)
    vio.save_xyz(scan.cloud, args.output)
    vio.write_scan_metadata(scan, args.output + ".meta")
    sys.stderr.write(f"scan-sim: {len(scan.cloud)} points -> {args.output}\n")
    return 0


def cmd_fit_gmm(args, config: PipelineConfig):
    path = _require(args.input)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == vio.FEATURES_MAGIC:
        features = vio.read_features(path)
    else:
        models = vio.load_manifest(path)
        features = pool_database_features(models, config)
    gmm = fit_gmm(features, config.gaussians, seed=config.seed)
    vio.write_gmm(gmm, args.output)
    sys.stderr.write(f"fit-gmm: K={config.gaussians} over {len(features)} features -> {args.output}\n")
    return 0


def cmd_build_db(args, config: PipelineConfig):
    models = vio.load_manifest(_require(args.input))
    gmm = vio.read_gmm(_require(args.gmm, "gmm"))
    db = build_db(models, gmm, config)
    vio.write_descriptor_db(db, args.output)
    sys.stderr.write(f"build-db: {len(db.entries)} entries -> {args.output}\n")
    return 0


def cmd_query(args, config: PipelineConfig):
    cloud = vio.load_xyz(_require(args.input))
    db = vio.read_descriptor_db(_require(args.db, "database"))
    gmm = vio.read_gmm(_require(args.gmm, "gmm"))
    points, _ = normalize_pose(cloud)
    resolutions = args.resolutions or config.resolutions
    grid = score_grid(points, None, resolutions, threads=config.threads)
    viewpoint = select_viewpoint(grid, points)
    resolution = select_resolution(grid, viewpoint)
    views = multiview_ring(viewpoint) if args.multiview else [viewpoint]
    descriptors = []
    for i, v in enumerate(views):
        img = render_point_cloud(points, v, resolution)
        feats = extract_features(img, config.n_keypoints, config.keypoint_decay,
                                 seed=[config.seed, i])
        descriptors.append(fisher_vector(feats, gmm))
    with _out(args) as fh:
        for model_id, distance in query_db(db, np.asarray(descriptors), args.top_k):
            fh.write(f"{model_id} {distance:.10f}\n")
    return 0


def cmd_bench(args, config: PipelineConfig):
    cases = [parse_case(name) for name in args.cases.split(",") if name]
    dataset = make_synthetic_dataset(n_classes=args.classes,
                                     scans_per_class=args.scans_per_class,
                                     seed=config.seed)
    report = run_benchmark(dataset, cases, config, seed=config.seed,
                           threads=config.threads)
    lines = ["case,metric,value\n"]
    lines += [f"{case},{metric},{value:.6f}\n" for case, metric, value in report.rows()]
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.writelines(lines)
    else:
        sys.stdout.writelines(lines)
    if args.pr_data:
        with open(args.pr_data, "w", encoding="utf-8") as fh:
            fh.write("case,query_id,recall,precision\n")
            for name, result in report.cases.items():
                for query_id, points in result.pr_points.items():
                    for recall, precision in points:
                        fh.write(f"{name},{query_id},{recall:.10f},{precision:.10f}\n")
    return 0


def cmd_grid_dump(args, config: PipelineConfig):
    cloud = vio.load_xyz(_require(args.input))
    points, _ = normalize_pose(cloud)
    resolutions = args.resolutions or config.resolutions
    grid = score_grid(points, None, resolutions, threads=config.threads)
    with _out(args) as fh:
        vio.write_score_grid_csv(grid, fh)
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        if args.command == "bench":
            config = _effective_config(args, desk_benchmark_config())
        else:
            config = _effective_config(args)
        if args.command == "normalize":
            return cmd_normalize(args)
        if args.command == "render":
            return cmd_render(args)
        if args.command == "select":
            return cmd_select(args, config)
        if args.command == "scan-sim":
            return cmd_scan_sim(args, config)
        if args.command == "fit-gmm":
            return cmd_fit_gmm(args, config)
        if args.command == "build-db":
            return cmd_build_db(args, config)
        if args.command == "query":
            return cmd_query(args, config)
        if args.command == "bench":
            return cmd_bench(args, config)
        if args.command == "grid-dump":
            return cmd_grid_dump(args, config)
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    except (ViewretError, OSError, ValueError) as exc:
        sys.stderr.write(f"viewret {args.command}: error: {exc}\n")
        return DATA_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
