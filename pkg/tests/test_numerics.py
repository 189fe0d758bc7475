import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from entity_embedding.errors import DegenerateInputError, DomainError, ShapeError, SingularCovarianceError
from entity_embedding.utils.numerics import (
    NormalityTest,
    child_rng,
    chi2_upper_tail,
    dagostino_k2,
    mardia,
    min_eigenpair,
    min_eigenvalue,
    pca,
    seeded_rng,
)


class TestRandomStreams:
    def test_same_seed_same_stream(self):
        assert_array_equal(seeded_rng(11).normal(size=5), seeded_rng(11).normal(size=5))

    def test_children_are_independent(self):
        a = child_rng(3, 0).normal(size=5)
        b = child_rng(3, 1).normal(size=5)
        assert not np.allclose(a, b)
        assert_array_equal(a, child_rng(3, 0).normal(size=5))


class TestPca:
    @pytest.fixture
    def data(self):
        rng = np.random.default_rng(0)
        return rng.normal(size=(200, 4)) @ np.diag([3.0, 2.0, 1.0, 0.5])

    def test_eigenvalues_match_covariance(self, data):
        result = pca(data)
        expected = np.sort(np.linalg.eigvalsh(np.cov(data, rowvar=False)))[::-1]
        assert_allclose(result.eigenvalues, expected, rtol=1e-10)

    def test_components_orthonormal(self, data):
        comps = pca(data).components
        assert_allclose(comps.T @ comps, np.eye(4), atol=1e-12)

    def test_rotation_moves_components_with_data(self, data):
        q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(4, 4)))
        base = pca(data)
        rotated = pca(data @ q.T)
        assert_allclose(rotated.eigenvalues, base.eigenvalues, atol=1e-8)
        alignment = np.sum(rotated.components * (q @ base.components), axis=0)
        assert_allclose(np.abs(alignment), 1.0, atol=1e-8)

    def test_full_reconstruction(self, data):
        result = pca(data)
        assert_allclose(result.reconstruct(result.project(data)), data, atol=1e-10)

    def test_sign_convention(self, data):
        comps = pca(data).components
        pivots = np.argmax(np.abs(comps), axis=0)
        assert np.all(comps[pivots, np.arange(4)] > 0)

    def test_explained_variance_sums_to_one(self, data):
        assert pca(data).explained_variance_ratio.sum() == pytest.approx(1.0)

    def test_too_few_rows(self):
        with pytest.raises(DegenerateInputError):
            pca(np.ones((1, 3)))


class TestEigen:
    def test_min_eigenvalue(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert min_eigenvalue(a) == pytest.approx(1.0)
        value, vector = min_eigenpair(a)
        assert_allclose(a @ vector, value * vector, atol=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(DomainError):
            min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            min_eigenvalue(np.ones((2, 3)))


class TestDagostino:
    def test_matches_reference_statistic(self):
        x = np.random.default_rng(4).normal(size=300)
        report = dagostino_k2(x)
        reference = stats.normaltest(x)
        assert report.test is NormalityTest.DAGOSTINO_K2
        assert_allclose(report.statistic, reference.statistic, rtol=1e-10)
        assert_allclose(report.p_value, reference.pvalue, rtol=1e-8)

    def test_rejects_exponential(self):
        x = np.random.default_rng(5).exponential(size=500)
        assert dagostino_k2(x).p_value < 0.001

    def test_too_few_points(self):
        with pytest.raises(DegenerateInputError):
            dagostino_k2(np.arange(19, dtype=float))

    def test_constant_input(self):
        with pytest.raises(DegenerateInputError):
            dagostino_k2(np.ones(50))

    def test_chi2_tail(self):
        assert chi2_upper_tail(0.0, 2) == pytest.approx(1.0)
        assert chi2_upper_tail(2.0 * np.log(20.0), 2) == pytest.approx(0.05)

    @pytest.mark.slow
    def test_false_positive_rate_calibrated(self):
        rejections = sum(dagostino_k2(seeded_rng(s).normal(size=500)).p_value < 0.05 for s in range(1000))
        assert 0.03 <= rejections / 1000 <= 0.07

    @pytest.mark.slow
    def test_exponential_rejected_across_seeds(self):
        rejected = sum(dagostino_k2(seeded_rng(s).exponential(size=500)).p_value < 0.001 for s in range(1000))
        assert rejected / 1000 >= 0.99


class TestMardia:
    def test_gaussian_sample(self):
        x = np.random.default_rng(8).normal(size=(500, 3))
        skew, kurt = mardia(x)
        assert skew.test is NormalityTest.MARDIA_SKEW
        assert kurt.test is NormalityTest.MARDIA_KURTOSIS
        assert 0.0 <= skew.p_value <= 1.0
        assert 0.0 <= kurt.p_value <= 1.0
        assert skew.statistic >= 0.0

    def test_skewed_sample_rejected(self):
        x = np.random.default_rng(9).exponential(size=(500, 2))
        skew, _ = mardia(x)
        assert skew.p_value < 0.001

    def test_singular_covariance(self):
        x = np.random.default_rng(1).normal(size=(50, 2))
        x = np.column_stack([x, x[:, 0] + x[:, 1]])
        with pytest.raises(SingularCovarianceError, match="reduce the dimension"):
            mardia(x)

    def test_needs_more_rows_than_columns(self):
        with pytest.raises(DegenerateInputError):
            mardia(np.random.default_rng(2).normal(size=(3, 3)))
