"""Retrieval metrics, viewpoint error and the synthetic benchmark runner.

Relevance is binary throughout: a retrieved model counts as relevant when it
shares the query's class. The benchmark follows a leave-one-out protocol in
which every scan queries a database built from all other scans.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .encode import fisher_vector, fit_gmm
from .errors import MissingGroundTruth, NoRelevant
from .features import extract_features
from .geometry import dodecahedron_viewpoints, normalize_pose
from .render import render_point_cloud
from .scansim import (ScannerConfig, make_box, make_cone, make_cylinder, make_sphere,
                      sample_mesh_surface, simulate_scan)
from .select import (best_resolution_for_viewpoint, ransac_viewpoint, score_grid,
                     select_resolution, select_viewpoint)

VIEWPOINT_SOURCES = ("ground_truth", "proposed", "ransac")
RESOLUTION_SOURCES = ("proposed", "fixed_256")
FIXED_RESOLUTION = 256

_VIEW_ABBREV = {"ground_truth": "gt", "proposed": "prop", "ransac": "ransac"}
_RES_ABBREV = {"proposed": "prop", "fixed_256": "fixed"}


@dataclass
class RankedRetrieval:
    """One query's class label and its ranking of (model id, class, distance)."""

    query_class: int
    items: list


@dataclass
class CaseConfig:
    viewpoint_source: str
    resolution_source: str

    def __post_init__(self):
        if self.viewpoint_source not in VIEWPOINT_SOURCES:
            raise ValueError(f"unknown viewpoint source {self.viewpoint_source!r}")
        if self.resolution_source not in RESOLUTION_SOURCES:
            raise ValueError(f"unknown resolution source {self.resolution_source!r}")

    @property
    def name(self) -> str:
        return f"{_VIEW_ABBREV[self.viewpoint_source]}-{_RES_ABBREV[self.resolution_source]}"

    @property
    def tag(self) -> int:
        """Stable integer identity, independent of which cases a run requests."""
        return (VIEWPOINT_SOURCES.index(self.viewpoint_source) * 10
                + RESOLUTION_SOURCES.index(self.resolution_source))


ALL_CASES = tuple(CaseConfig(v, r) for v in VIEWPOINT_SOURCES for r in RESOLUTION_SOURCES)


def parse_case(name: str) -> CaseConfig:
    for case in ALL_CASES:
        if case.name == name:
            return case
    raise ValueError(f"unknown case {name!r}; expected one of "
                     + ",".join(c.name for c in ALL_CASES))


def precision_recall_curve(retrieval: RankedRetrieval, total_relevant: int = None) -> list:
    """One (recall, precision) point per rank position.

    ``total_relevant`` defaults to the number of relevant items in the list
    itself; pass it explicitly for truncated rankings.
    """
    rel = [cls == retrieval.query_class for _, cls, _ in retrieval.items]
    total = sum(rel) if total_relevant is None else total_relevant
    if total < 1:
        raise NoRelevant("ranking has no relevant items in its universe")
    points = []
    found = 0
    for rank, is_rel in enumerate(rel, start=1):
        found += is_rel
        points.append((found / total, found / rank))
    return points


def nn_metric(results) -> float:
    """Percentage of queries whose top-ranked item shares the query class."""
    hits = sum(1 for r in results if r.items and r.items[0][1] == r.query_class)
    return 100.0 * hits / len(results)


def _average_precision(retrieval: RankedRetrieval) -> float:
    found = 0
    precisions = []
    for rank, (_, cls, _) in enumerate(retrieval.items, start=1):
        if cls == retrieval.query_class:
            found += 1
            precisions.append(found / rank)
    return float(np.mean(precisions)) if precisions else 0.0


def map_metric(results) -> float:
    """Mean over classes of the mean average precision of that class's queries."""
    per_class = {}
    for r in results:
        per_class.setdefault(r.query_class, []).append(_average_precision(r))
    return 100.0 * float(np.mean([np.mean(v) for v in per_class.values()]))


def ndcg_metric(results) -> float:
    """Mean normalized discounted cumulative gain with binary relevance."""
    scores = []
    for r in results:
        rel = [cls == r.query_class for _, cls, _ in r.items]
        total = sum(rel)
        if total == 0:
            scores.append(0.0)
            continue
        dcg = sum(1.0 / np.log2(rank + 1) for rank, is_rel in enumerate(rel, start=1) if is_rel)
        idcg = sum(1.0 / np.log2(rank + 1) for rank in range(1, total + 1))
        scores.append(dcg / idcg)
    return 100.0 * float(np.mean(scores))


def angular_error(v_est, v_gt) -> float:
    """Angle in radians between two unit vectors, in [0, pi]."""
    dot = float(np.asarray(v_est, dtype=np.float64) @ np.asarray(v_gt, dtype=np.float64))
    return float(np.arccos(np.clip(dot, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# synthetic dataset and benchmark

@dataclass
class ScanEntry:
    """One dataset instance: a partial scan plus, optionally, its source mesh."""

    model_id: str
    class_id: int
    cloud: np.ndarray
    gt_viewpoint: np.ndarray = None
    mesh: object = None


_CLASS_MAKERS = (
    ("sphere", lambda rng: make_sphere(radius=float(rng.uniform(0.8, 1.2)))),
    ("box", lambda rng: make_box(extents=rng.uniform(0.9, 1.3, size=3))),
    ("cylinder", lambda rng: make_cylinder(radius=float(rng.uniform(0.36, 0.42)),
                                           height=float(rng.uniform(1.7, 1.9)))),
    ("cone", lambda rng: make_cone(radius=float(rng.uniform(0.55, 0.7)),
                                   height=float(rng.uniform(1.6, 1.9)))),
)


def _random_direction(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def make_synthetic_dataset(n_classes: int = 4, scans_per_class: int = 5, seed: int = 0,
                           fov_deg: float = 40.0, step_deg: float = 0.5,
                           distance: float = 3.0, classes=None) -> list:
    """Simulated partial scans of jittered primitive meshes from random poses."""
    makers = _CLASS_MAKERS if classes is None else [m for m in _CLASS_MAKERS if m[0] in classes]
    makers = makers[:n_classes]
    rng = np.random.default_rng(seed)
    entries = []
    for class_id, (name, make) in enumerate(makers):
        for index in range(scans_per_class):
            mesh = make(rng)
            direction = _random_direction(rng)
            cfg = ScannerConfig(position=direction * distance, target=(0.0, 0.0, 0.0),
                                fov_deg=fov_deg, angular_step_deg=step_deg,
                                max_range=4.0 * distance)
            scan = simulate_scan(mesh, cfg)
            entries.append(ScanEntry(model_id=f"{name}-{index}", class_id=class_id,
                                     cloud=scan.cloud, gt_viewpoint=scan.ground_truth_viewpoint))
    return entries


def make_viewpoint_scan_dataset(n_scans: int = 12, seed: int = 0, fov_deg: float = 45.0,
                                step_deg: float = 0.3, distance: float = 3.0) -> list:
    """Curved-primitive scans for viewpoint-estimation experiments.

    Spheres and capped cylinders alternate; both expose enough curvature for
    the scanned side to be recoverable, which flat-dominant poses of boxes
    or cones do not.
    """
    rng = np.random.default_rng(seed)
    entries = []
    for index in range(n_scans):
        if index % 2 == 0:
            mesh = make_sphere(radius=float(rng.uniform(0.8, 1.2)))
            name = "sphere"
        else:
            mesh = make_cylinder(radius=float(rng.uniform(0.45, 0.6)),
                                 height=float(rng.uniform(1.0, 1.4)))
            name = "cylinder"
        direction = _random_direction(rng)
        cfg = ScannerConfig(position=direction * distance, target=(0.0, 0.0, 0.0),
                            fov_deg=fov_deg, angular_step_deg=step_deg,
                            max_range=4.0 * distance)
        scan = simulate_scan(mesh, cfg)
        entries.append(ScanEntry(model_id=f"{name}-{index}", class_id=index % 2,
                                 cloud=scan.cloud, gt_viewpoint=scan.ground_truth_viewpoint))
    return entries


@dataclass
class _ScanState:
    points: np.ndarray
    grid: object
    v_proposed: np.ndarray
    r_proposed: int
    v_ransac: np.ndarray
    gt_viewpoint: np.ndarray
    db_descriptors: np.ndarray = None


@dataclass
class CaseResult:
    metrics: dict
    retrievals: list
    pr_points: dict


@dataclass
class BenchmarkReport:
    cases: dict = field(default_factory=dict)

    def rows(self):
        for name, result in self.cases.items():
            for metric in ("nn", "map", "ndcg"):
                yield name, metric, result.metrics[metric]


def _prepare_scan(entry: ScanEntry, index: int, config: PipelineConfig, seed: int) -> _ScanState:
    points, _ = normalize_pose(entry.cloud)
    grid = score_grid(points, None, config.resolutions)
    v_prop = select_viewpoint(grid, points)
    r_prop = select_resolution(grid, v_prop)
    v_ransac = ransac_viewpoint(points, config.ransac_iterations, config.ransac_tolerance,
                                seed=[seed, 11, index])
    return _ScanState(points=points, grid=grid, v_proposed=v_prop, r_proposed=r_prop,
                      v_ransac=v_ransac, gt_viewpoint=entry.gt_viewpoint)


def viewpoint_error_experiment(dataset, config: PipelineConfig, seed: int = 0) -> dict:
    """Angular errors of the proposed selector and the RANSAC baseline.

    Every dataset entry must carry a ground-truth viewpoint. Returns arrays
    of per-scan errors keyed by method name.
    """
    proposed = []
    ransac = []
    for index, entry in enumerate(dataset):
        if entry.gt_viewpoint is None:
            raise MissingGroundTruth(f"scan {entry.model_id} has no ground-truth viewpoint")
        state = _prepare_scan(entry, index, config, seed)
        proposed.append(angular_error(state.v_proposed, entry.gt_viewpoint))
        ransac.append(angular_error(state.v_ransac, entry.gt_viewpoint))
    return {"proposed": np.asarray(proposed), "ransac": np.asarray(ransac)}


DB_SURFACE_POINTS = 15000


def _database_images(entry: ScanEntry, state: _ScanState, index: int, views,
                     config: PipelineConfig, seed: int):
    """Database-side depth images for one instance.

    An instance carrying its complete source mesh contributes a full surface
    point sample, so the database covers the whole model while staying in
    the same imaging domain as the scan queries; scan-only instances fall
    back to their partial cloud. Either way the cloud renders at its own
    proposed resolution from all 20 viewpoints.
    """
    if entry.mesh is not None:
        cloud = sample_mesh_surface(entry.mesh, DB_SURFACE_POINTS, seed=[seed, 29, index])
        points, _ = normalize_pose(cloud)
        grid = score_grid(points, views, config.resolutions)
        v_best = select_viewpoint(grid, points)
        r_best = select_resolution(grid, v_best)
    else:
        points, r_best = state.points, state.r_proposed
    return [render_point_cloud(points, v, r_best) for v in views]


def run_benchmark(dataset, cases, config: PipelineConfig, seed: int = 0,
                  threads: int = 1) -> BenchmarkReport:
    """Leave-one-out retrieval over the dataset for every requested case.

    Each instance queries a database built from all other instances. The
    database side always follows the standard pipeline (20 views per
    instance); the case only controls how the query view and query
    resolution are chosen. Deterministic for a fixed seed and any thread
    count.
    """
    cases = [parse_case(c) if isinstance(c, str) else c for c in cases]
    if not dataset:
        raise ValueError("dataset is empty")
    for case in cases:
        if case.viewpoint_source == "ground_truth":
            for entry in dataset:
                if entry.gt_viewpoint is None:
                    raise MissingGroundTruth(
                        f"case {case.name} needs ground truth, but {entry.model_id} has none")

    views = dodecahedron_viewpoints()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            states = list(pool.map(
                lambda pair: _prepare_scan(pair[1], pair[0], config, seed),
                enumerate(dataset)))
    else:
        states = [_prepare_scan(entry, i, config, seed) for i, entry in enumerate(dataset)]

    all_feats = []
    per_instance_feats = []
    for index, (entry, state) in enumerate(zip(dataset, states)):
        images = _database_images(entry, state, index, views, config, seed)
        feats = [np.asarray(extract_features(img, config.n_keypoints, config.keypoint_decay,
                                             seed=[seed, 13, index, view_id]), dtype=np.float32)
                 for view_id, img in enumerate(images)]
        per_instance_feats.append(feats)
        all_feats.extend(feats)
    pooled = np.concatenate(all_feats, axis=0)
    if len(pooled) > config.gmm_sample_cap:
        rng = np.random.default_rng([seed, 17])
        keep = rng.choice(len(pooled), size=config.gmm_sample_cap, replace=False)
        pooled = pooled[np.sort(keep)]
    gmm = fit_gmm(pooled, config.gaussians, seed=[seed, 19])

    for state, feats in zip(states, per_instance_feats):
        state.db_descriptors = np.stack([fisher_vector(f, gmm) for f in feats])
    del per_instance_feats, all_feats, pooled

    report = BenchmarkReport()
    for case in cases:
        retrievals = []
        pr_points = {}
        for index, (entry, state) in enumerate(zip(dataset, states)):
            if case.viewpoint_source == "ground_truth":
                v_query = entry.gt_viewpoint
            elif case.viewpoint_source == "proposed":
                v_query = state.v_proposed
            else:
                v_query = state.v_ransac
            if case.resolution_source == "fixed_256":
                r_query = FIXED_RESOLUTION
            elif case.viewpoint_source == "proposed":
                r_query = state.r_proposed
            else:
                r_query = best_resolution_for_viewpoint(state.points, v_query, config.resolutions)
            img = render_point_cloud(state.points, v_query, r_query)
            feats = extract_features(img, config.n_keypoints, config.keypoint_decay,
                                     seed=[seed, 23, case.tag, index])
            q_desc = fisher_vector(feats, gmm)
            items = []
            for other_idx, (other, other_state) in enumerate(zip(dataset, states)):
                if other_idx == index:
                    continue
                mat = other_state.db_descriptors
                cos = np.clip((mat @ q_desc)
                              / (np.linalg.norm(mat, axis=1) * np.linalg.norm(q_desc)),
                              -1.0, 1.0)
                items.append((other.model_id, other.class_id, float((1.0 - cos).min())))
            items.sort(key=lambda it: it[2])
            retrieval = RankedRetrieval(query_class=entry.class_id, items=items)
            retrievals.append(retrieval)
            pr_points[entry.model_id] = precision_recall_curve(retrieval)
        report.cases[case.name] = CaseResult(
            metrics={"nn": nn_metric(retrievals),
                     "map": map_metric(retrievals),
                     "ndcg": ndcg_metric(retrievals)},
            retrievals=retrievals,
            pr_points=pr_points)
    return report


def desk_benchmark_config(seed: int = 42, threads: int = 1) -> PipelineConfig:
    """Scaled-down parameters for the synthetic desk-size benchmark."""
    return PipelineConfig(n_keypoints=350, keypoint_decay=2.0, gaussians=32,
                          resolutions=(32, 64, 128, 256), gmm_sample_cap=20000,
                          seed=seed, threads=threads)
