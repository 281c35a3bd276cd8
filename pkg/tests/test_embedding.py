import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfk.embedding import (
    WeightedEmbedding,
    empirical_embedding,
    inner_product,
    squared_mmd_biased,
    squared_mmd_unbiased,
)
from cfk.kernels import KernelSpec, eval_kernel

GAUSS = KernelSpec.gaussian(1.0)
LIN = KernelSpec.linear()

samples = st.integers(2, 12).flatmap(lambda n: arrays(float, (n,), elements=st.floats(-4, 4)))
weights_for = lambda n: arrays(float, (n,), elements=st.floats(-2, 2))  # noqa: E731


def loop_inner(A, B):
    total = 0.0
    for wa, a in zip(A.weights, A.points):
        for wb, b in zip(B.weights, B.points):
            total += wa * wb * eval_kernel(A.kernel, a, b)
    return total


def loop_unbiased(a, b, spec):
    n, m = len(a), len(b)
    aa = sum(eval_kernel(spec, a[i], a[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    bb = sum(eval_kernel(spec, b[i], b[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    ab = sum(eval_kernel(spec, x, y) for x in a for y in b) / (n * m)
    return aa + bb - 2 * ab


class TestWeightedEmbedding:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            WeightedEmbedding([0.0, 1.0], [1.0], GAUSS)

    def test_empty(self):
        with pytest.raises(ValueError):
            WeightedEmbedding(np.empty((0, 1)), [], GAUSS)

    def test_negative_weights_allowed(self):
        emb = WeightedEmbedding([0.0, 1.0], [1.5, -0.5], GAUSS)
        assert emb.weights.sum() == 1.0

    def test_evaluation(self):
        emb = WeightedEmbedding([0.0, 2.0], [0.5, 0.5], GAUSS)
        assert emb([0.0])[0] == pytest.approx((1 + math.exp(-2)) / 2, abs=1e-15)


class TestEmpiricalEmbedding:
    def test_single_point(self):
        np.testing.assert_array_equal(empirical_embedding(GAUSS, [3.0]).weights, [1.0])

    def test_three_points(self):
        np.testing.assert_array_equal(empirical_embedding(GAUSS, [1.0, 2.0, 3.0]).weights, [1 / 3] * 3)

    def test_weights_sum_to_one(self, rng):
        assert empirical_embedding(GAUSS, rng.normal(size=10)).weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            empirical_embedding(GAUSS, [])


class TestInnerProduct:
    def test_single_point_gaussian(self):
        A = WeightedEmbedding([0.4], [1.0], GAUSS)
        assert inner_product(A, A) == 1.0

    def test_linear_with_origin(self):
        assert inner_product(WeightedEmbedding([0.0], [1.0], LIN), WeightedEmbedding([2.0], [1.0], LIN)) == 0.0

    def test_two_point_value(self):
        A = WeightedEmbedding([0.0, 2.0], [0.5, 0.5], GAUSS)
        B = WeightedEmbedding([0.0], [1.0], GAUSS)
        assert inner_product(A, B) == pytest.approx(0.5676676416183064, abs=1e-12)

    def test_kernel_mismatch(self):
        with pytest.raises(ValueError):
            inner_product(WeightedEmbedding([0.0], [1.0], GAUSS), WeightedEmbedding([0.0], [1.0], LIN))


class TestBiasedMmd:
    def test_identity(self):
        A = WeightedEmbedding([0.0, 1.0, 2.0], [0.2, -0.3, 1.1], GAUSS)
        assert squared_mmd_biased(A, A) <= 1e-12

    def test_linear_points(self):
        assert squared_mmd_biased(empirical_embedding(LIN, [0.0]), empirical_embedding(LIN, [2.0])) == 4.0

    def test_gaussian_points(self):
        value = squared_mmd_biased(empirical_embedding(GAUSS, [0.0]), empirical_embedding(GAUSS, [2.0]))
        assert value == pytest.approx(1.7293294335267746, abs=1e-12)

    @given(samples, samples)
    def test_matches_double_loop(self, a, b):
        A, B = empirical_embedding(GAUSS, a), empirical_embedding(GAUSS, b)
        oracle = loop_inner(A, A) - 2 * loop_inner(A, B) + loop_inner(B, B)
        assert squared_mmd_biased(A, B) == pytest.approx(max(oracle, 0.0), abs=1e-10)

    @given(samples.flatmap(lambda a: st.tuples(st.just(a), weights_for(len(a)))))
    def test_weighted_self_distance_zero(self, aw):
        a, w = aw
        A = WeightedEmbedding(a, w, GAUSS)
        assert squared_mmd_biased(A, A) <= 1e-12

    @given(samples, samples)
    def test_linear_kernel_is_squared_mean_difference(self, a, b):
        value = squared_mmd_biased(empirical_embedding(LIN, a), empirical_embedding(LIN, b))
        assert value == pytest.approx((a.mean() - b.mean()) ** 2, abs=1e-10)

    def test_negative_rounding_is_clamped(self):
        A = WeightedEmbedding([1e8], [1.0], LIN)
        B = WeightedEmbedding([1e8 * (1 + 1e-16)], [1.0], LIN)
        assert squared_mmd_biased(A, B) >= 0.0


class TestUnbiasedMmd:
    def test_identical_pairs(self):
        # within terms give 2 l(a,b); the cross term keeps its diagonal: (2 l(a,a) + 2 l(a,b)) / 2
        a, b = 0.3, 1.2
        expected = eval_kernel(GAUSS, a, b) - eval_kernel(GAUSS, a, a)
        assert squared_mmd_unbiased([a, b], [a, b], GAUSS) == pytest.approx(expected, abs=1e-15)

    def test_all_zero_samples(self):
        assert squared_mmd_unbiased([0.0, 0.0], [0.0, 0.0], LIN) == 0.0

    def test_linear_worked_value(self):
        assert squared_mmd_unbiased([0.0, 1.0], [2.0, 3.0], LIN) == pytest.approx(3.5, abs=1e-14)

    def test_too_small(self):
        with pytest.raises(ValueError):
            squared_mmd_unbiased([0.0], [1.0, 2.0], GAUSS)

    @given(samples, samples)
    def test_matches_double_loop(self, a, b):
        assert squared_mmd_unbiased(a, b, GAUSS) == pytest.approx(loop_unbiased(a, b, GAUSS), abs=1e-10)

    def test_centered_under_null(self):
        rng = np.random.default_rng(3)
        vals = np.array([squared_mmd_unbiased(rng.normal(size=20), rng.normal(size=20), GAUSS) for _ in range(1000)])
        assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / math.sqrt(vals.size)
