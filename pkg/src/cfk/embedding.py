"""Weighted kernel mean embeddings and MMD estimators."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec, as_points, gram

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightedEmbedding:
    """The RKHS element ``sum_i weights[i] * k(points[i], .)``.

    Weights may be negative and need not sum to one.
    """

    points: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        pts = as_points(self.points)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] == 0:
            raise ValueError("embedding needs at least one point")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __call__(self, y) -> np.ndarray:
        """Evaluate the embedding (as a function) at each point of ``y``."""
        return gram(self.kernel, y, self.points) @ self.weights

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def empirical_embedding(spec: KernelSpec, sample) -> WeightedEmbedding:
    pts = as_points(sample)
    if pts.shape[0] == 0:
        raise ValueError("empty sample")
    n = pts.shape[0]
    return WeightedEmbedding(pts, np.full(n, 1.0 / n), spec)


def _check_same_kernel(A: WeightedEmbedding, B: WeightedEmbedding):
    if A.kernel != B.kernel:
        raise ValueError(f"embeddings use different kernels: {A.kernel} vs {B.kernel}")


def inner_product(A: WeightedEmbedding, B: WeightedEmbedding) -> float:
    _check_same_kernel(A, B)
    return float(A.weights @ gram(A.kernel, A.points, B.points) @ B.weights)


def squared_mmd_biased(A: WeightedEmbedding, B: WeightedEmbedding) -> float:
    """Squared RKHS distance ``||A - B||^2``, clamped at zero."""
    _check_same_kernel(A, B)
    value = inner_product(A, A) - 2.0 * inner_product(A, B) + inner_product(B, B)
    if value < 0.0:
        logger.debug("clamping negative squared MMD %.3e to 0", value)
        return 0.0
    return value


def squared_mmd_unbiased(sample_a, sample_b, spec: KernelSpec) -> float:
    """U-statistic estimate of the squared MMD; may be negative."""
    a = as_points(sample_a)
    b = as_points(sample_b)
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise ValueError("unbiased MMD needs at least 2 points per sample")
    K_aa = gram(spec, a)
    K_bb = gram(spec, b)
    K_ab = gram(spec, a, b)
    within_a = (K_aa.sum() - np.trace(K_aa)) / (n * (n - 1))
    within_b = (K_bb.sum() - np.trace(K_bb)) / (m * (m - 1))
    return float(within_a + within_b - 2.0 * K_ab.sum() / (n * m))
