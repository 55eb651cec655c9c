import numpy as np
import pytest

from viewret.config import PipelineConfig
from viewret.encode import (DescriptorDb, GmmParams, build_db, cosine_distance, fisher_vector,
                            fit_gmm, gmm_posteriors, query_db)
from viewret.errors import (DimensionMismatch, EmptyDb, EmptyFeatureSet, TooFewFeatures,
                            ZeroVector)
from viewret.scansim import make_box


def random_gmm(rng, k, dim):
    return GmmParams(weights=np.full(k, 1.0 / k),
                     means=rng.normal(size=(k, dim)),
                     sigmas=rng.uniform(0.5, 2.0, size=(k, dim)))


def fisher_oracle(features, gmm):
    """Literal per-feature, per-component accumulation of the gradient formulas."""
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    k = gmm.n_components
    parts = []
    for kk in range(k):
        u = np.zeros(gmm.dim)
        v = np.zeros(gmm.dim)
        for i in range(n):
            q = gmm_posteriors(x[i], gmm)[kk]
            z = (x[i] - gmm.means[kk]) / gmm.sigmas[kk]
            u += q * z
            v += q * (1.0 / np.sqrt(2.0)) * (z * z - 1.0)
        parts.append(u / (n * np.sqrt(gmm.weights[kk])))
        parts.append(v / (n * np.sqrt(gmm.weights[kk])))
    return np.concatenate(parts)


class TestFitGmm:
    def test_two_separated_clusters(self):
        rng = np.random.default_rng(25)
        a = rng.normal(0.0, 0.05, size=(120, 4))
        b = rng.normal(5.0, 0.05, size=(80, 4))
        gmm = fit_gmm(np.concatenate([a, b]), 2, seed=0)
        centroids = sorted([a.mean(axis=0), b.mean(axis=0)], key=lambda c: c[0])
        fitted = sorted(gmm.means, key=lambda c: c[0])
        np.testing.assert_allclose(fitted[0], centroids[0], atol=1e-3)
        np.testing.assert_allclose(fitted[1], centroids[1], atol=1e-3)
        np.testing.assert_allclose(sorted(gmm.weights), [0.4, 0.6], atol=0.02)

    def test_single_component_closed_form(self):
        rng = np.random.default_rng(26)
        x = rng.normal(size=(200, 6)) * 2.0 + 1.0
        gmm = fit_gmm(x, 1, seed=0)
        assert gmm.weights[0] == 1.0
        np.testing.assert_allclose(gmm.means[0], x.mean(axis=0), atol=1e-9)
        np.testing.assert_allclose(gmm.sigmas[0] ** 2, np.maximum(x.var(axis=0), 1e-6), atol=1e-9)

    def test_log_likelihood_never_decreases(self):
        rng = np.random.default_rng(27)
        for trial in range(5):
            k = int(rng.integers(1, 5))
            x = np.concatenate([rng.normal(rng.uniform(-3, 3), rng.uniform(0.3, 1.0),
                                           size=(rng.integers(40, 90), 5))
                                for _ in range(k)])
            gmm = fit_gmm(x, k, seed=trial)
            trace = np.asarray(gmm.log_likelihoods)
            assert len(trace) >= 2
            assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))

    def test_deterministic(self):
        rng = np.random.default_rng(28)
        x = rng.normal(size=(150, 4))
        a = fit_gmm(x, 3, seed=5)
        b = fit_gmm(x, 3, seed=5)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.sigmas, b.sigmas)

    def test_too_few_features(self):
        with pytest.raises(TooFewFeatures):
            fit_gmm(np.zeros((19, 4)), 2, seed=0)

    def test_default_parameter_set(self):
        config = PipelineConfig()
        assert config.gaussians == 256
        assert config.n_keypoints == 1000
        assert config.keypoint_decay == 1.0
        assert len(config.resolutions) == 8
        assert config.ransac_iterations == 1000
        assert config.ransac_tolerance == 0.01
        assert config.db_resolution == 256
        assert config.seed == 42


class TestGmmPosteriors:
    def test_single_component(self):
        gmm = random_gmm(np.random.default_rng(29), 1, 8)
        np.testing.assert_array_equal(gmm_posteriors(np.zeros(8), gmm), [1.0])

    def test_collapses_onto_matching_component(self):
        dim = 8
        gmm = GmmParams(weights=np.array([0.5, 0.5]),
                        means=np.stack([np.zeros(dim), np.full(dim, 50.0)]),
                        sigmas=np.ones((2, dim)))
        q = gmm_posteriors(np.zeros(dim), gmm)
        assert q[0] >= 1.0 - 1e-12
        assert q[1] <= 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(30)
        gmm = random_gmm(rng, 5, 12)
        x = rng.normal(size=(40, 12)) * 10
        q = gmm_posteriors(x, gmm)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


class TestFisherVector:
    def test_features_at_mean_single_component(self):
        dim = 16
        gmm = GmmParams(weights=np.array([1.0]),
                        means=np.zeros((1, dim)),
                        sigmas=np.ones((1, dim)))
        raw = fisher_vector(np.zeros((7, dim)), gmm, normalize=False)
        np.testing.assert_allclose(raw[:dim], 0.0, atol=1e-15)
        np.testing.assert_allclose(raw[dim:], -1.0 / np.sqrt(2.0), atol=1e-12)

    def test_duplicated_features_change_nothing(self):
        rng = np.random.default_rng(31)
        gmm = random_gmm(rng, 3, 10)
        x = rng.normal(size=(1, 10))
        once = fisher_vector(x, gmm, normalize=False)
        tenfold = fisher_vector(np.repeat(x, 10, axis=0), gmm, normalize=False)
        np.testing.assert_allclose(once, tenfold, atol=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(3):
            k = int(rng.integers(1, 6))
            n = int(rng.integers(2, 40))
            gmm = random_gmm(rng, k, 9)
            x = rng.normal(size=(n, 9))
            got = fisher_vector(x, gmm, normalize=False)
            want = fisher_oracle(x, gmm)
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_normalized_output_is_unit(self):
        rng = np.random.default_rng(33)
        gmm = random_gmm(rng, 4, 8)
        d = fisher_vector(rng.normal(size=(30, 8)), gmm)
        assert abs(np.linalg.norm(d) - 1.0) <= 1e-9

    def test_empty_feature_set(self):
        gmm = random_gmm(np.random.default_rng(34), 2, 8)
        with pytest.raises(EmptyFeatureSet):
            fisher_vector(np.zeros((0, 8)), gmm)


class TestCosineDistance:
    def test_identical(self):
        v = np.array([1.0, 2.0, 3.0])
        assert cosine_distance(v, v) <= 1e-12

    def test_orthogonal(self):
        assert cosine_distance([1.0, 0.0], [0.0, 5.0]) == pytest.approx(1.0, abs=1e-12)

    def test_opposite(self):
        assert cosine_distance([1.0, -2.0], [-1.0, 2.0]) == pytest.approx(2.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ZeroVector):
            cosine_distance([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(DimensionMismatch):
            cosine_distance([1.0, 0.0], [1.0, 0.0, 0.0])


def tiny_config(seed=0):
    return PipelineConfig(n_keypoints=40, keypoint_decay=2.0, gaussians=2,
                          resolutions=(32, 64), db_resolution=64,
                          gmm_sample_cap=5000, seed=seed)


class TestBuildAndQueryDb:
    def make_gmm(self, rng):
        feats = np.abs(rng.normal(size=(60, 128))) * 0.05
        return fit_gmm(feats, 2, seed=0)

    def test_mesh_yields_twenty_entries(self):
        rng = np.random.default_rng(35)
        db = build_db([("box", 0, make_box())], self.make_gmm(rng), tiny_config())
        assert len(db.entries) == 20
        assert sorted(e.viewpoint_id for e in db.entries) == list(range(20))

    def test_default_db_resolution(self):
        assert PipelineConfig().db_resolution == 256

    def test_rejects_empty_and_duplicate_model_lists(self):
        rng = np.random.default_rng(99)
        gmm = self.make_gmm(rng)
        with pytest.raises(ValueError):
            build_db([], gmm, tiny_config())
        cloud = rng.normal(size=(100, 3))
        with pytest.raises(ValueError):
            build_db([("same", 0, cloud), ("same", 1, cloud)], gmm, tiny_config())

    def test_rebuild_is_identical(self):
        rng = np.random.default_rng(36)
        gmm = self.make_gmm(rng)
        cloud = rng.normal(size=(500, 3))
        a = build_db([("m", 1, cloud)], gmm, tiny_config(seed=9))
        b = build_db([("m", 1, cloud)], gmm, tiny_config(seed=9))
        for ea, eb in zip(a.entries, b.entries):
            assert np.array_equal(ea.descriptor, eb.descriptor)

    def test_exact_match_ranks_first(self):
        rng = np.random.default_rng(37)
        from viewret.encode import DbEntry
        descs = rng.normal(size=(6, 64)).astype(np.float32)
        db = DescriptorDb(entries=[DbEntry(f"m{i}", i % 2, 0, d) for i, d in enumerate(descs)])
        ranking = query_db(db, descs[3][None, :], top_k=3)
        assert ranking[0][0] == "m3"
        assert ranking[0][1] <= 1e-6

    def test_top_k_overflow_returns_everything(self):
        rng = np.random.default_rng(38)
        from viewret.encode import DbEntry
        db = DescriptorDb(entries=[DbEntry(f"m{i}", 0, 0, rng.normal(size=16).astype(np.float32))
                                   for i in range(4)])
        assert len(query_db(db, rng.normal(size=(1, 16)), top_k=100)) == 4

    def test_matches_exhaustive_pairwise_oracle(self):
        rng = np.random.default_rng(39)
        from viewret.encode import DbEntry
        entries = [DbEntry(f"m{i}", 0, v, rng.normal(size=32).astype(np.float32))
                   for i in range(3) for v in range(2)]
        db = DescriptorDb(entries=entries)
        queries = rng.normal(size=(2, 32))
        ranking = query_db(db, queries)
        expect = {}
        for entry in entries:
            for q in queries:
                d = cosine_distance(q, entry.descriptor)
                expect[entry.model_id] = min(expect.get(entry.model_id, np.inf), d)
        want = sorted(expect.items(), key=lambda kv: kv[1])
        assert [m for m, _ in ranking] == [m for m, _ in want]
        np.testing.assert_allclose([d for _, d in ranking], [d for _, d in want], atol=1e-12)

    def test_ranking_invariant_under_descriptor_scaling(self):
        rng = np.random.default_rng(40)
        from viewret.encode import DbEntry
        descs = rng.normal(size=(5, 16)).astype(np.float32)
        q = rng.normal(size=(1, 16))
        db1 = DescriptorDb(entries=[DbEntry(f"m{i}", 0, 0, d) for i, d in enumerate(descs)])
        db2 = DescriptorDb(entries=[DbEntry(f"m{i}", 0, 0, d * 7.5) for i, d in enumerate(descs)])
        assert [m for m, _ in query_db(db1, q)] == [m for m, _ in query_db(db2, 2.0 * q)]

    def test_empty_db(self):
        with pytest.raises(EmptyDb):
            query_db(DescriptorDb(entries=[]), np.ones((1, 8)))
