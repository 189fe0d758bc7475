import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_codes
from entity_embedding.errors import ConfigError, DegenerateInputError, DomainError, ShapeError
from entity_embedding.services.geometry import (
    CategoryMetric,
    cross_subspace_correlation,
    embedding_metric_scatter,
    estimate_metric,
    merge_indiscernible,
    nn_purity,
    pc_density_report,
    procrustes_alignment,
    random_directions,
    sales_along_direction,
    schoenberg_check,
    schoenberg_sweep,
)
from entity_embedding.services.net import EmbeddingMatrix, InputMode, Network, TrainConfig, ensemble_predictor
from entity_embedding.services.tabular import Dataset, FeatureKind, FeatureSchema, FeatureSpec
from entity_embedding.utils.numerics import seeded_rng


@pytest.fixture
def coded_dataset(small_schema):
    x = random_codes(small_schema, 200, seed=1)
    y = np.random.default_rng(2).uniform(10.0, 100.0, size=200)
    return Dataset(small_schema, x, y, np.full(200, "2015-01-01", dtype="datetime64[D]"))


@pytest.fixture
def random_network(small_schema):
    cfg = TrainConfig(hidden_sizes=(16, 8), input_mode=InputMode.EMBED)
    return Network.initialize(small_schema, cfg, seeded_rng(0))


class TestEstimateMetric:
    @pytest.mark.parametrize("feature", [0, 1, 2])
    def test_metric_axioms(self, coded_dataset, random_network, feature):
        metric = estimate_metric(ensemble_predictor([random_network]), coded_dataset, feature, samples=50, seed=4)
        d = metric.distances
        assert d.shape == (metric.size, metric.size)
        assert_array_equal(np.diag(d), 0.0)
        assert_allclose(d, d.T, atol=1e-15)
        assert np.all(d >= 0.0)
        via = d[:, :, None] + d[None, :, :]
        assert np.all(d[:, None, :] <= via + 1e-12)

    @pytest.mark.slow
    def test_metric_axioms_across_models(self, coded_dataset, small_schema):
        cfg = TrainConfig(hidden_sizes=(16, 8))
        for seed in range(100):
            net = Network.initialize(small_schema, cfg, seeded_rng(seed))
            d = estimate_metric(ensemble_predictor([net]), coded_dataset, 0, samples=30, seed=seed).distances
            assert_array_equal(d, d.T)
            assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12)

    def test_matches_direct_average(self, coded_dataset, random_network):
        predict = ensemble_predictor([random_network])
        metric = estimate_metric(predict, coded_dataset, "b", samples=30, seed=5)
        rows = seeded_rng(5).choice(len(coded_dataset), size=30, replace=False)
        base = np.array(coded_dataset.x[rows])
        left, right = base.copy(), base.copy()
        left[:, 1], right[:, 1] = 0, 3
        expected = np.mean(np.abs(predict(left) - predict(right)))
        assert metric.distances[0, 3] == pytest.approx(expected, rel=1e-12)

    def test_ignored_feature_gives_zero_metric(self, coded_dataset):
        metric = estimate_metric(lambda x: x[:, 1].astype(float), coded_dataset, 0, samples=40)
        assert_array_equal(metric.distances, 0.0)

    def test_labels_and_metadata(self, coded_dataset, random_network):
        metric = estimate_metric(ensemble_predictor([random_network]), coded_dataset, 1, samples=20, seed=9)
        assert metric.labels == ("0", "1", "2", "3", "4")
        assert (metric.samples, metric.seed, metric.feature) == (20, 9, 1)

    def test_single_value_feature(self):
        schema = FeatureSchema((FeatureSpec("only", FeatureKind.CATEGORICAL, ("x",), 1),))
        data = Dataset(schema, np.zeros((3, 1), dtype=int), np.ones(3), np.full(3, "2015-01-01", dtype="datetime64[D]"))
        with pytest.raises(DegenerateInputError):
            estimate_metric(lambda x: np.zeros(len(x)), data, 0)

    def test_sample_count(self, coded_dataset):
        with pytest.raises(ConfigError):
            estimate_metric(lambda x: np.zeros(len(x)), coded_dataset, 0, samples=0)


class TestMerge:
    def test_zero_distance_values_collapse(self):
        d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        merged, mapping = merge_indiscernible(CategoryMetric(0, d))
        assert merged.size == 2
        assert merged.labels == ("0|1", "2")
        assert_array_equal(mapping, [0, 0, 1])
        assert_array_equal(merged.distances, [[0.0, 1.0], [1.0, 0.0]])

    def test_tolerance_groups_transitively(self):
        pts = np.array([0.0, 0.05, 0.1, 5.0])
        d = np.abs(pts[:, None] - pts[None, :])
        merged, mapping = merge_indiscernible(CategoryMetric(2, d), tol=0.06)
        assert merged.size == 2
        assert_array_equal(mapping, [0, 0, 0, 1])

    def test_nothing_to_merge(self):
        d = np.array([[0.0, 1.0], [1.0, 0.0]])
        merged, mapping = merge_indiscernible(CategoryMetric(0, d))
        assert merged.size == 2
        assert_array_equal(mapping, [0, 1])


class TestSchoenberg:
    def test_line_metric_is_positive_definite(self):
        pts = np.arange(6.0)
        d = np.abs(pts[:, None] - pts[None, :])
        checks = schoenberg_sweep(d)
        assert [c.lam for c in checks] == [0.1, 1.0, 10.0]
        assert all(c.is_positive_definite for c in checks)
        assert all(c.tolerance == pytest.approx(6e-10) for c in checks)

    def test_non_positive_definite_kernel(self):
        kernel = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.9], [0.1, 0.9, 1.0]])
        check = schoenberg_check(-np.log(kernel), 1.0)
        assert_allclose(check.kernel, kernel, atol=1e-15)
        oracle = np.min(np.roots(np.poly(kernel)).real)
        assert check.min_eigenvalue == pytest.approx(oracle, abs=1e-8)
        assert check.min_eigenvalue < 0.0
        assert not check.is_positive_definite

    def test_accepts_category_metric(self):
        d = np.array([[0.0, 2.0], [2.0, 0.0]])
        check = schoenberg_check(CategoryMetric(0, d), 0.5)
        assert check.min_eigenvalue == pytest.approx(1.0 - np.exp(-1.0))
        assert check.to_dict()["lambda"] == 0.5

    def test_lambda_must_be_positive(self):
        with pytest.raises(ConfigError):
            schoenberg_check(np.zeros((2, 2)), 0.0)

    def test_non_square(self):
        with pytest.raises(ShapeError):
            CategoryMetric(0, np.zeros((2, 3)))


class TestScatter:
    @pytest.fixture
    def embedding(self):
        return EmbeddingMatrix(0, np.random.default_rng(0).normal(size=(8, 3)))

    @pytest.fixture
    def metric(self):
        pts = np.random.default_rng(1).uniform(size=8)
        return CategoryMetric(0, np.abs(pts[:, None] - pts[None, :]))

    def test_columns_and_values(self, embedding, metric):
        frame = embedding_metric_scatter(embedding, metric, pairs=10, seed=3)
        assert list(frame.columns) == ["pair_id", "p", "q", "emb_dist", "metric_dist"]
        assert len(frame) == 10
        assert np.all(frame["p"] < frame["q"])
        row = frame.iloc[4]
        p, q = int(row["p"]), int(row["q"])
        assert row["emb_dist"] == pytest.approx(np.linalg.norm(embedding.weights[p] - embedding.weights[q]))
        assert row["metric_dist"] == metric.distances[p, q]

    def test_pairs_are_distinct(self, embedding, metric):
        frame = embedding_metric_scatter(embedding, metric, pairs=20, seed=3)
        assert len(set(zip(frame["p"], frame["q"]))) == 20

    def test_clips_to_available_pairs(self, embedding, metric, caplog):
        with caplog.at_level(logging.WARNING):
            frame = embedding_metric_scatter(embedding, metric, pairs=10000)
        assert len(frame) == 28
        assert "clipping" in caplog.text

    def test_size_mismatch(self, metric):
        with pytest.raises(ShapeError):
            embedding_metric_scatter(EmbeddingMatrix(0, np.zeros((5, 2))), metric)


class TestDirections:
    def test_projection_sorted_and_nan_dropped(self):
        emb = EmbeddingMatrix(0, np.array([[3.0, 0.0], [1.0, 5.0], [2.0, -1.0], [0.0, 0.0]]))
        sales = np.array([30.0, 10.0, 20.0, np.nan])
        frame = sales_along_direction(emb, np.array([2.0, 0.0]), sales)
        assert list(frame["category"]) == [1, 2, 0]
        assert_allclose(frame["projection"], [1.0, 2.0, 3.0])
        assert_allclose(frame["mean_sales"], [10.0, 20.0, 30.0])
        assert set(frame["component"]) == {"pc1"}

    def test_zero_direction(self):
        emb = EmbeddingMatrix(0, np.eye(2))
        with pytest.raises(DomainError):
            sales_along_direction(emb, np.zeros(2), np.ones(2))

    def test_direction_width(self):
        with pytest.raises(ShapeError):
            sales_along_direction(EmbeddingMatrix(0, np.eye(2)), np.ones(3), np.ones(2))

    def test_random_directions_are_unit_and_seeded(self):
        v = random_directions(5, count=3, seed=2)
        assert v.shape == (3, 5)
        assert_allclose(np.linalg.norm(v, axis=1), 1.0)
        assert_array_equal(v, random_directions(5, count=3, seed=2))


class TestDensity:
    def test_gaussian_embedding(self):
        data = np.random.default_rng(0).normal(size=(300, 5)) * [4.0, 3.0, 2.0, 1.0, 0.5]
        report = pc_density_report(data, top_k=4, bins=20)
        assert [c.component for c in report] == [1, 2, 3, 4]
        for c in report:
            assert c.bin_masses.sum() == pytest.approx(1.0)
            assert c.bin_edges.size == 21
            assert c.normality is not None
            assert c.normality.p_value > 1e-4
        assert report[0].sigma > report[3].sigma

    def test_too_few_points_skips_test(self, caplog):
        with caplog.at_level(logging.WARNING):
            report = pc_density_report(np.random.default_rng(1).normal(size=(10, 3)), top_k=2)
        assert all(c.normality is None for c in report)
        assert "too few" in caplog.text

    def test_top_k_range(self):
        with pytest.raises(ShapeError):
            pc_density_report(np.zeros((30, 2)), top_k=3)


class TestCrossCorrelation:
    def test_shared_codes_are_fully_correlated(self):
        rng = np.random.default_rng(0)
        codes = rng.integers(0, 6, size=400)
        weights = rng.normal(size=(6, 2))
        report = cross_subspace_correlation(
            [EmbeddingMatrix(0, weights), EmbeddingMatrix(1, weights * 3.0)],
            np.column_stack([codes, codes]),
        )
        assert report.between(1, 0) == pytest.approx(1.0, abs=1e-9)

    def test_independent_features(self):
        rng = np.random.default_rng(1)
        codes = np.column_stack([rng.integers(0, 8, size=3000), rng.integers(0, 5, size=3000)])
        embs = [EmbeddingMatrix(0, rng.normal(size=(8, 3))), EmbeddingMatrix(1, rng.normal(size=(5, 2)))]
        report = cross_subspace_correlation(embs, codes)
        assert report.max_abs < 0.2
        assert set(report.to_dict()["pairs"]) == {"0-1"}

    def test_needs_two_features(self):
        with pytest.raises(ShapeError):
            cross_subspace_correlation([EmbeddingMatrix(0, np.eye(2))], np.zeros((3, 1), dtype=int))


class TestAlignment:
    def test_similarity_transform_has_no_disparity(self):
        rng = np.random.default_rng(0)
        ref = rng.normal(size=(20, 2))
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        disparity, _ = procrustes_alignment(ref, 2.5 * ref @ rot + [3.0, -1.0])
        assert disparity == pytest.approx(0.0, abs=1e-12)

    def test_unrelated_points(self):
        rng = np.random.default_rng(1)
        disparity, aligned = procrustes_alignment(rng.normal(size=(30, 2)), rng.normal(size=(30, 2)))
        assert disparity > 0.5
        assert aligned.shape == (30, 2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            procrustes_alignment(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_purity(self):
        pts = np.vstack([np.zeros((5, 2)) + np.arange(5)[:, None] * 0.01, np.full((5, 2), 10.0)])
        assert nn_purity(pts, ["a"] * 5 + ["b"] * 5) == 1.0
        assert nn_purity(np.array([[0.0], [1.0], [10.0], [11.0]]), [0, 1, 0, 1]) == 0.0

    def test_purity_shapes(self):
        with pytest.raises(ShapeError):
            nn_purity(np.zeros((3, 2)), [1, 2])
