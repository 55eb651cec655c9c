import numpy as np
import pytest

from viewret.config import PipelineConfig
from viewret.errors import MissingGroundTruth, NoRelevant
from viewret.evaluate import (CaseConfig, RankedRetrieval, angular_error, make_synthetic_dataset,
                              make_viewpoint_scan_dataset, map_metric, ndcg_metric, nn_metric,
                              parse_case, precision_recall_curve, run_benchmark,
                              viewpoint_error_experiment)


def ranking(query_class, labels, base_distance=0.1):
    items = [(f"m{i}", cls, base_distance + 0.05 * i) for i, cls in enumerate(labels)]
    return RankedRetrieval(query_class=query_class, items=items)


class TestPrecisionRecallCurve:
    def test_two_relevant_ranked_first(self):
        points = precision_recall_curve(ranking(1, [1, 1, 0, 0]))
        assert points == [(0.5, 1.0), (1.0, 1.0), (1.0, 2 / 3), (1.0, 0.5)]

    def test_single_relevant_item(self):
        assert precision_recall_curve(ranking(1, [1])) == [(1.0, 1.0)]

    def test_truncated_ranking_with_missing_relevant(self):
        points = precision_recall_curve(ranking(1, [0, 0, 0]), total_relevant=2)
        assert points[-1] == (0.0, 0.0)

    def test_precision_bounds_and_recall_monotone(self):
        rng = np.random.default_rng(44)
        for _ in range(20):
            labels = list(rng.integers(0, 2, size=10))
            if sum(labels) == 0:
                labels[0] = 1
            points = precision_recall_curve(ranking(1, labels))
            recalls = [r for r, _ in points]
            assert all(0 <= p <= 1 for _, p in points)
            assert recalls == sorted(recalls)

    def test_no_relevant(self):
        with pytest.raises(NoRelevant):
            precision_recall_curve(ranking(1, [0, 0]))


class TestNnMetric:
    def test_three_of_four(self):
        results = [ranking(1, [1, 0]), ranking(1, [1, 0]), ranking(1, [1, 0]), ranking(1, [0, 1])]
        assert nn_metric(results) == 75.0

    def test_all_correct(self):
        assert nn_metric([ranking(2, [2, 0])] * 5) == 100.0

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(45)
        results = [ranking(int(rng.integers(3)), list(rng.integers(0, 3, size=6)))
                   for _ in range(40)]
        want = 100.0 * sum(r.items[0][1] == r.query_class for r in results) / len(results)
        assert nn_metric(results) == want


def naive_average_precision(labels, query_class):
    hits, precs = 0, []
    for rank, cls in enumerate(labels, start=1):
        if cls == query_class:
            hits += 1
            precs.append(hits / rank)
    return sum(precs) / len(precs) if precs else 0.0


class TestMapMetric:
    def test_perfect(self):
        results = [ranking(c, [c, c, 1 - c]) for c in (0, 1)]
        assert map_metric(results) == 100.0

    def test_hand_example(self):
        # relevant at ranks 1 and 3 of 3
        value = map_metric([ranking(1, [1, 0, 1])])
        assert value == pytest.approx(100.0 * (1.0 + 2.0 / 3.0) / 2.0, abs=1e-9)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(46)
        results = [ranking(int(rng.integers(3)), list(rng.integers(0, 3, size=8)))
                   for _ in range(60)]
        per_class = {}
        for r in results:
            labels = [cls for _, cls, _ in r.items]
            per_class.setdefault(r.query_class, []).append(
                naive_average_precision(labels, r.query_class))
        want = 100.0 * np.mean([np.mean(v) for v in per_class.values()])
        assert map_metric(results) == pytest.approx(want, abs=1e-12)


class TestNdcgMetric:
    def test_perfect(self):
        assert ndcg_metric([ranking(1, [1, 1, 0])]) == pytest.approx(100.0, abs=1e-12)

    def test_hand_example(self):
        value = ndcg_metric([ranking(1, [0, 1, 1])])
        dcg = 1 / np.log2(3) + 1 / np.log2(4)
        idcg = 1.0 + 1 / np.log2(3)
        assert value == pytest.approx(100.0 * dcg / idcg, abs=1e-9)
        assert value == pytest.approx(69.34, abs=0.01)

    def test_no_relevant_scores_zero(self):
        assert ndcg_metric([ranking(1, [0, 0])]) == 0.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(47)
        results = [ranking(int(rng.integers(2)), list(rng.integers(0, 2, size=7)))
                   for _ in range(50)]
        scores = []
        for r in results:
            rel = [1 if cls == r.query_class else 0 for _, cls, _ in r.items]
            dcg = sum(v / np.log2(i + 1) for i, v in enumerate(rel, start=1))
            ideal = sorted(rel, reverse=True)
            idcg = sum(v / np.log2(i + 1) for i, v in enumerate(ideal, start=1))
            scores.append(dcg / idcg if idcg > 0 else 0.0)
        want = 100.0 * np.mean(scores)
        assert ndcg_metric(results) == pytest.approx(want, abs=1e-12)

    def test_all_metrics_saturate_together(self):
        results = [ranking(c, [c, c, 1 - c, 1 - c]) for c in (0, 1) for _ in range(3)]
        assert nn_metric(results) == 100.0
        assert map_metric(results) == 100.0
        assert ndcg_metric(results) == pytest.approx(100.0, abs=1e-12)


class TestAngularError:
    def test_identical(self):
        assert angular_error([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == 0.0

    def test_orthogonal(self):
        assert angular_error([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]) == pytest.approx(np.pi / 2)

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(48)
        for _ in range(30):
            u, v, w = rng.normal(size=(3, 3))
            u, v, w = (x / np.linalg.norm(x) for x in (u, v, w))
            assert angular_error(u, v) == angular_error(v, u)
            assert angular_error(u, w) <= angular_error(u, v) + angular_error(v, w) + 1e-12


class TestCaseConfig:
    def test_names_round_trip(self):
        for name in ("gt-prop", "gt-fixed", "prop-prop", "prop-fixed", "ransac-prop", "ransac-fixed"):
            assert parse_case(name).name == name

    def test_unknown_case(self):
        with pytest.raises(ValueError):
            parse_case("gt-gt")

    def test_invalid_sources(self):
        with pytest.raises(ValueError):
            CaseConfig("guessed", "proposed")


class TestDatasets:
    def test_synthetic_dataset_shape(self):
        ds = make_synthetic_dataset(n_classes=2, scans_per_class=2, seed=1, step_deg=1.0)
        assert len(ds) == 4
        assert sorted({e.class_id for e in ds}) == [0, 1]
        for e in ds:
            assert len(e.cloud) > 50
            assert abs(np.linalg.norm(e.gt_viewpoint) - 1.0) <= 1e-9

    def test_viewpoint_dataset_has_ground_truth(self):
        ds = make_viewpoint_scan_dataset(n_scans=4, seed=2, step_deg=1.0)
        assert len(ds) == 4
        for e in ds:
            assert e.gt_viewpoint is not None


def micro_config(seed=0):
    return PipelineConfig(n_keypoints=40, keypoint_decay=2.0, gaussians=2,
                          resolutions=(32, 64), gmm_sample_cap=4000, seed=seed)


class TestRunBenchmark:
    def test_report_structure_and_determinism(self):
        ds = make_synthetic_dataset(n_classes=2, scans_per_class=2, seed=3, step_deg=0.8)
        a = run_benchmark(ds, ["prop-prop"], micro_config(), seed=3)
        b = run_benchmark(ds, ["prop-prop"], micro_config(), seed=3)
        assert set(a.cases) == {"prop-prop"}
        metrics = a.cases["prop-prop"].metrics
        assert set(metrics) == {"nn", "map", "ndcg"}
        assert all(0.0 <= v <= 100.0 for v in metrics.values())
        assert metrics == b.cases["prop-prop"].metrics
        rows_a = list(a.rows())
        rows_b = list(b.rows())
        assert rows_a == rows_b

    def test_threads_do_not_change_results(self):
        ds = make_synthetic_dataset(n_classes=2, scans_per_class=2, seed=4, step_deg=0.8)
        a = run_benchmark(ds, ["prop-prop"], micro_config(), seed=4, threads=1)
        b = run_benchmark(ds, ["prop-prop"], micro_config(), seed=4, threads=4)
        assert list(a.rows()) == list(b.rows())

    def test_missing_ground_truth(self):
        ds = make_synthetic_dataset(n_classes=2, scans_per_class=2, seed=5, step_deg=1.0)
        ds[1].gt_viewpoint = None
        with pytest.raises(MissingGroundTruth):
            run_benchmark(ds, ["gt-prop"], micro_config(), seed=5)

    def test_complete_model_database_branch(self):
        from viewret.scansim import make_sphere

        ds = make_synthetic_dataset(n_classes=2, scans_per_class=2, seed=6, step_deg=1.0)
        for e in ds:
            e.mesh = make_sphere(radius=1.0, rings=6, segments=8)
        report = run_benchmark(ds, ["prop-prop"], micro_config(), seed=6)
        assert "prop-prop" in report.cases


class TestViewpointErrorExperiment:
    def test_runs_and_reports_both_methods(self):
        ds = make_viewpoint_scan_dataset(n_scans=2, seed=7, step_deg=0.8)
        cfg = PipelineConfig(resolutions=(64, 128), ransac_iterations=100)
        errs = viewpoint_error_experiment(ds, cfg, seed=7)
        assert len(errs["proposed"]) == len(errs["ransac"]) == 2
        assert np.all(errs["proposed"] >= 0) and np.all(errs["proposed"] <= np.pi)

    def test_requires_ground_truth(self):
        ds = make_viewpoint_scan_dataset(n_scans=2, seed=8, step_deg=1.0)
        ds[0].gt_viewpoint = None
        with pytest.raises(MissingGroundTruth):
            viewpoint_error_experiment(ds, PipelineConfig(resolutions=(64,)), seed=8)
