"""Sketch tree structure, oracle agreement and incremental evaluation."""

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import hadamard

from ksembed.errors import InvalidArgumentError, ResourceLimitError
from ksembed.linalg import SparseDataMatrix
from ksembed.oracles import explicit_sketch_matrix
from ksembed.sketch import (
    build_sketch_tree,
    default_final_dim,
    default_internal_dim,
    dense_tensor_power,
    fwht,
    next_pow2,
    recompute_family,
    sketch_matrix_family,
    sketch_suffix_family,
    sketch_tensor_power,
)


def small_tree(d=3, q=2, seed=0, m=16, s_int=64):
    return build_sketch_tree(d, q, m, s_int, osnap_sparsity=4, seed=seed)


class TestHelpers:
    @pytest.mark.parametrize("value,expected", [(1, 1), (3, 4), (4, 4), (1000, 1024), (0.5, 1)])
    def test_next_pow2(self, value, expected):
        assert next_pow2(value) == expected

    @pytest.mark.parametrize("N", [1, 2, 8, 64, 512])
    def test_fwht_matches_hadamard(self, N):
        a = np.random.default_rng(N).standard_normal((N, 3))
        np.testing.assert_allclose(fwht(a), hadamard(N) @ a, atol=1e-10)

    def test_fwht_rejects_non_power_of_two(self):
        with pytest.raises(InvalidArgumentError):
            fwht(np.ones(6))

    def test_default_dims(self):
        # q=2, eps=0.1, delta=0.05: 2 * 100 * ln(20)^3 = 5324.6 -> 8192
        assert default_internal_dim(2, 0.1, 0.05) == 8192
        assert default_internal_dim(2, 0.1, 0.05, cap=1000) == 1024
        assert default_final_dim(0.1, 0.05) == 1498


class TestDenseTensorPower:
    def test_basis_vector(self):
        out = dense_tensor_power(np.array([0.0, 0.0, 1.0]), 2)
        expected = np.zeros(9)
        expected[8] = 1.0
        np.testing.assert_array_equal(out, expected)

    def test_second_basis_vector_index(self):
        # e_2 in 1-based terms is index 1; (1, 1) sits at 1*3 + 1 = 4
        out = dense_tensor_power(np.array([0.0, 1.0, 0.0]), 2)
        assert np.flatnonzero(out).tolist() == [4]

    def test_degree_one(self):
        x = np.array([1.5, -2.0])
        np.testing.assert_array_equal(dense_tensor_power(x, 1), x)

    def test_enumeration(self):
        np.testing.assert_array_equal(dense_tensor_power(np.array([1.0, 2.0]), 3), [1, 2, 2, 4, 2, 4, 4, 8])

    def test_norm(self):
        x = np.random.default_rng(0).standard_normal(4)
        assert np.linalg.norm(dense_tensor_power(x, 3)) == pytest.approx(np.linalg.norm(x) ** 3, rel=1e-10)

    def test_guard(self):
        with pytest.raises(ResourceLimitError):
            dense_tensor_power(np.ones(100), 4)


class TestTreeStructure:
    def test_single_leaf(self):
        tree = small_tree(d=4, q=1)
        assert tree.n_leaves == 1 and tree.n_internal == 0
        assert tree.compression.shape == (16, 64)

    def test_three_leaves(self):
        tree = small_tree(d=8, q=3)
        assert tree.n_leaves == 3 and tree.n_internal == 2

    def test_internal_dim_rounded_up(self):
        assert build_sketch_tree(3, 2, 10, 100).internal_dim == 128

    def test_determinism(self):
        x = np.array([0.3, -1.0, 2.0])
        np.testing.assert_array_equal(
            sketch_tensor_power(small_tree(seed=5), x), sketch_tensor_power(small_tree(seed=5), x)
        )

    @pytest.mark.parametrize(
        "args", [(0, 2, 4, 8), (3, 0, 4, 8), (3, 2, 0, 8), (3, 2, 16, 8)]
    )
    def test_rejects_bad_sizes(self, args):
        with pytest.raises(InvalidArgumentError):
            build_sketch_tree(*args)


class TestAgainstExplicitMatrix:
    def test_zero_vector(self):
        np.testing.assert_array_equal(sketch_tensor_power(small_tree(), np.zeros(3)), 0.0)

    def test_sparse_vector(self):
        tree = small_tree(d=3, q=2, seed=1)
        S = explicit_sketch_matrix(tree)
        x = sp.csc_matrix(np.array([[0.0], [1.3], [-0.4]]))
        expected = S @ dense_tensor_power(x.toarray().ravel(), 2)
        np.testing.assert_allclose(sketch_tensor_power(tree, x), expected, atol=1e-10)

    @pytest.mark.parametrize("q", [1, 2, 3, 4])
    def test_degrees(self, q):
        tree = small_tree(d=2, q=q, seed=q)
        S = explicit_sketch_matrix(tree)
        x = np.array([0.7, -1.1])
        np.testing.assert_allclose(sketch_tensor_power(tree, x), S @ dense_tensor_power(x, q), atol=1e-10)

    def test_linearity(self):
        tree = small_tree(d=2, q=2, seed=9)
        S = explicit_sketch_matrix(tree)
        x, y = np.array([1.0, 2.0]), np.array([-0.5, 0.25])
        a, b = 0.3, -1.7
        combined = a * sketch_tensor_power(tree, x) + b * sketch_tensor_power(tree, y)
        expected = S @ (a * dense_tensor_power(x, 2) + b * dense_tensor_power(y, 2))
        np.testing.assert_allclose(combined, expected, atol=1e-10)

    def test_matrix_family_first_member(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((3, 4))
        tree = small_tree(d=3, q=2, seed=2)
        S = explicit_sketch_matrix(tree)
        P0 = sketch_matrix_family(tree, X)[0]
        expected = np.column_stack([S @ dense_tensor_power(X[:, c], 2) for c in range(4)])
        np.testing.assert_allclose(P0, expected, atol=1e-10)

    def test_family_members_match_mixed_tensors(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(3)
        e1 = np.array([1.0, 0.0, 0.0])
        tree = small_tree(d=3, q=3, seed=3)
        S = explicit_sketch_matrix(tree)
        fam = sketch_suffix_family(tree, x)
        for j in range(4):
            vec = np.kron(dense_tensor_power(x, 3 - j), dense_tensor_power(e1, j))
            np.testing.assert_allclose(fam[j], S @ vec, atol=1e-10)


class TestIncrementalFamily:
    @pytest.mark.parametrize("q", [1, 2, 3, 5, 8])
    def test_bit_identical_to_recompute(self, q):
        rng = np.random.default_rng(q)
        X = sp.random(5, 7, density=0.5, random_state=q, format="csc")
        tree = build_sketch_tree(5, q, 32, 128, seed=q)
        inc = sketch_matrix_family(tree, X)
        ref = recompute_family(tree, SparseDataMatrix.from_scipy(X))
        assert len(inc) == q + 1
        for a, b in zip(inc, ref):
            np.testing.assert_array_equal(a, b)

    def test_last_member_independent_of_x(self):
        tree = small_tree(d=3, q=3, seed=4)
        a = sketch_suffix_family(tree, np.array([1.0, 2.0, 3.0]))[-1]
        b = sketch_suffix_family(tree, np.array([-4.0, 0.0, 0.5]))[-1]
        np.testing.assert_array_equal(a, b)

    def test_e1_gives_identical_members(self):
        tree = small_tree(d=3, q=3, seed=6)
        fam = sketch_suffix_family(tree, np.array([1.0, 0.0, 0.0]))
        for member in fam[1:]:
            np.testing.assert_array_equal(member, fam[0])

    def test_single_column_agrees(self):
        tree = small_tree(d=3, q=2, seed=7)
        x = np.array([0.2, 0.0, -3.0])
        fam = sketch_matrix_family(tree, x[:, None])
        for j, v in enumerate(sketch_suffix_family(tree, x)):
            np.testing.assert_array_equal(fam[j][:, 0], v)

    def test_duplicate_columns(self):
        tree = small_tree(d=3, q=2, seed=8)
        x = np.array([0.5, 1.0, -1.0])
        fam = sketch_matrix_family(tree, np.column_stack([x, x]))
        for P in fam:
            np.testing.assert_array_equal(P[:, 0], P[:, 1])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            sketch_matrix_family(small_tree(d=3), np.ones((4, 2)))
        with pytest.raises(InvalidArgumentError):
            sketch_tensor_power(small_tree(d=3), np.ones(4))


class TestNormPreservation:
    def test_e1_norm_over_fresh_trees(self):
        # q=2 with the default widths for eps=0.1, delta=0.05
        eps, delta = 0.1, 0.05
        m = default_final_dim(eps, delta)
        s_int = default_internal_dim(2, eps, delta)
        e1 = np.zeros(4)
        e1[0] = 1.0
        hits = 0
        for seed in range(200):
            tree = build_sketch_tree(4, 2, m, s_int, seed=seed)
            hits += abs(np.sum(sketch_tensor_power(tree, e1) ** 2) - 1.0) <= eps
        assert hits / 200 >= 1 - delta
