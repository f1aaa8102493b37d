"""Polynomial-kernel row sampler and embeddings against explicit liftings."""

import numpy as np
import pytest
import scipy.sparse as sp

from ksembed.errors import DegenerateInputError, InvalidArgumentError
from ksembed.oracles import poly_exact_distribution, poly_lifting
from ksembed.poly import (
    poly_embed_out_of_sample,
    poly_embed_rows,
    poly_embedding,
    poly_frobenius_sq,
    poly_row_sampler,
    polynomial_kernel_matrix,
)
from ksembed.sampling import FeatureIndex, SamplerConfig, sampling_matrix_from_arrays, verify_row_norm_sampler
from ksembed.sketch import dense_tensor_power

N = 10**5


def draw_check(X, q, B, lam, seed):
    Pi = poly_row_sampler(X, q, B, lam, N, SamplerConfig(seed=seed))
    exact = poly_exact_distribution(X, q, B, lam)
    return Pi, verify_row_norm_sampler(Pi.empirical_frequencies(), exact, 0.25, N)


class TestKernelMatrix:
    def test_values(self):
        X = np.array([[1.0, 2.0], [0.0, 1.0]])
        np.testing.assert_array_equal(polynomial_kernel_matrix(X, 3), [[1, 8], [8, 125]])

    def test_gram_of_lifting(self):
        X = np.random.default_rng(0).standard_normal((3, 4))
        A = poly_lifting(X, 2)
        np.testing.assert_allclose(A.T @ A, polynomial_kernel_matrix(X, 2), rtol=1e-12)

    def test_frobenius(self):
        X = np.array([[3.0, 1.0], [4.0, 0.0]])
        assert poly_frobenius_sq(X, 2) == 625.0 + 1.0


class TestRowSampler:
    def test_diagonal_degree_one(self):
        X = np.diag([3.0, 4.0])
        Pi, (ok, _) = draw_check(X, 1, np.zeros((0, 2)), 1.0, seed=0)
        assert ok
        exact = poly_exact_distribution(X, 1, np.zeros((0, 2)), 1.0)
        assert exact[FeatureIndex(1, (0,))] == pytest.approx(9 / 25)
        assert exact[FeatureIndex(1, (1,))] == pytest.approx(16 / 25)

    def test_single_nonzero_coordinate(self):
        X = sp.csc_matrix(([2.5], ([1], [2])), shape=(3, 4))
        Pi = poly_row_sampler(X, 2, np.zeros((0, 4)), 0.5, 200, SamplerConfig(seed=3))
        assert set(Pi.empirical_frequencies()) == {FeatureIndex(2, (1, 1))}
        np.testing.assert_allclose(Pi.probabilities, 1.0)

    def test_random_sparse_with_B(self):
        X = sp.random(3, 4, density=0.6, random_state=1, format="csc")
        B = np.random.default_rng(1).standard_normal((2, 4))
        Pi, (ok, worst) = draw_check(X, 2, B, 0.5, seed=1)
        assert ok, worst
        assert Pi.all_weights_consistent()

    def test_claimed_probabilities_calibrated(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((2, 3))
        B = rng.standard_normal((2, 3))
        Pi = poly_row_sampler(X, 2, B, 0.3, N, SamplerConfig(seed=4))
        labels = Pi.flat_offsets()
        for lab in np.unique(labels):
            mask = labels == lab
            freq = mask.mean()
            se = np.sqrt(freq * (1 - freq) / N)
            assert abs(freq - Pi.probabilities[mask].mean()) <= 3 * se + 1e-3

    def test_probabilities_positive(self):
        X = np.random.default_rng(5).standard_normal((3, 5))
        Pi = poly_row_sampler(X, 3, np.zeros((0, 5)), 1.0, 500, SamplerConfig(seed=5))
        assert np.all(Pi.probabilities > 0)

    def test_deterministic(self):
        X = np.random.default_rng(6).standard_normal((3, 5))
        B = np.ones((1, 5))
        a = poly_row_sampler(X, 2, B, 1.0, 300, SamplerConfig(seed=9))
        b = poly_row_sampler(X, 2, B, 1.0, 300, SamplerConfig(seed=9))
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_zero_data_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            poly_row_sampler(np.zeros((2, 3)), 2, np.zeros((0, 3)), 1.0, 10)

    @pytest.mark.parametrize("q,s", [(0, 10), (2, 0)])
    def test_rejects(self, q, s):
        with pytest.raises(InvalidArgumentError):
            poly_row_sampler(np.eye(2), q, np.zeros((0, 2)), 1.0, s)


class TestEmbedRows:
    def test_identity_sampler_degree_one(self):
        X = np.array([[1.0, -2.0, 0.0], [0.5, 0.0, 3.0]])
        Pi = sampling_matrix_from_arrays(2, [1, 1], [(0,), (1,)], [0.5, 0.5])
        np.testing.assert_array_equal(poly_embed_rows(X, Pi), X)

    def test_direct_product(self):
        X = np.array([[3.0], [5.0]])
        Pi = sampling_matrix_from_arrays(2, [2], [(0, 1)], [0.25])
        assert Pi.weights[0] == 2.0
        assert poly_embed_rows(X, Pi)[0, 0] == 30.0

    def test_against_dense_lifting(self):
        X = np.random.default_rng(7).standard_normal((3, 4))
        Pi = poly_row_sampler(X, 2, np.zeros((0, 4)), 1.0, 50, SamplerConfig(seed=7))
        A = poly_lifting(X, 2)
        expected = Pi.weights[:, None] * A[Pi.indices[:, 0] * 3 + Pi.indices[:, 1]]
        np.testing.assert_allclose(poly_embed_rows(X, Pi), expected, rtol=1e-12)

    def test_sampler_embedding_matches(self):
        X = np.random.default_rng(8).standard_normal((3, 4))
        Pi = poly_row_sampler(X, 3, np.zeros((0, 4)), 1.0, 40, SamplerConfig(seed=8))
        np.testing.assert_allclose(Pi.embedding, poly_embed_rows(X, Pi), rtol=1e-12, atol=1e-14)

    def test_index_out_of_range(self):
        Pi = sampling_matrix_from_arrays(5, [1], [(4,)], [1.0])
        with pytest.raises(InvalidArgumentError):
            poly_embed_rows(np.ones((2, 3)), Pi)


class TestOutOfSample:
    def setup_method(self):
        self.X = np.random.default_rng(10).standard_normal((3, 5))
        self.Pi = poly_row_sampler(self.X, 2, np.zeros((0, 5)), 1.0, 30, SamplerConfig(seed=10))

    def test_zero_vector(self):
        np.testing.assert_array_equal(poly_embed_out_of_sample(np.zeros(3), self.Pi), 0.0)

    def test_training_column(self):
        Z = poly_embed_rows(self.X, self.Pi)
        np.testing.assert_allclose(poly_embed_out_of_sample(self.X[:, 2], self.Pi), Z[:, 2], rtol=1e-12)

    def test_dense_oracle(self):
        x = np.array([0.3, -1.2, 0.8])
        lifted = dense_tensor_power(x, 2)
        expected = self.Pi.weights * lifted[self.Pi.indices[:, 0] * 3 + self.Pi.indices[:, 1]]
        np.testing.assert_allclose(poly_embed_out_of_sample(x, self.Pi), expected, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            poly_embed_out_of_sample(np.ones(4), self.Pi)


class TestPipeline:
    def test_small_end_to_end(self):
        X = np.random.default_rng(11).standard_normal((3, 12)) / np.sqrt(3)
        Pi = poly_embedding(X, 2, 0.5, 1 / 3, 3.0, SamplerConfig(seed=11))
        assert Pi.embedding.shape == (Pi.s, 12)
        assert Pi.rounds >= 1 and Pi.all_weights_consistent()
        np.testing.assert_allclose(Pi.embedding, poly_embed_rows(X, Pi), rtol=1e-10, atol=1e-12)
