"""Positive-definite kernels, Gram matrices, bandwidth selection and Nystrom factors."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

#: Eigenvalues of the landmark block below this are treated as zero.
NYSTROM_EIG_CLIP = 1e-12


class KernelFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family together with its hyperparameters.

    ``bandwidth`` is used by the Gaussian and Laplace families only,
    ``degree`` and ``offset`` by the polynomial family only.
    """

    family: KernelFamily
    bandwidth: Optional[float] = None
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.family in (KernelFamily.GAUSSIAN, KernelFamily.LAPLACE):
            if self.bandwidth is None or not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
                raise ValueError(f"{self.family.value} kernel needs a positive bandwidth, got {self.bandwidth}")
            object.__setattr__(self, "bandwidth", float(self.bandwidth))
        if self.family is KernelFamily.POLYNOMIAL:
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError(f"polynomial degree must be a positive integer, got {self.degree}")
            if self.offset < 0:
                raise ValueError(f"polynomial offset must be nonnegative, got {self.offset}")

    @classmethod
    def gaussian(cls, bandwidth: float) -> "KernelSpec":
        return cls(KernelFamily.GAUSSIAN, bandwidth=bandwidth)

    @classmethod
    def laplace(cls, bandwidth: float) -> "KernelSpec":
        return cls(KernelFamily.LAPLACE, bandwidth=bandwidth)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(KernelFamily.LINEAR)

    @classmethod
    def polynomial(cls, degree: int = 2, offset: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.POLYNOMIAL, degree=degree, offset=offset)

    @property
    def is_shift_invariant(self) -> bool:
        return self.family in (KernelFamily.GAUSSIAN, KernelFamily.LAPLACE)

    def to_dict(self) -> dict:
        out = {"family": self.family.value}
        if self.is_shift_invariant:
            out["bandwidth"] = self.bandwidth
        elif self.family is KernelFamily.POLYNOMIAL:
            out.update(degree=int(self.degree), offset=self.offset)
        return out


@dataclass(frozen=True)
class ProductKernel:
    """Product of kernels acting on disjoint column blocks of the input.

    ``factors`` holds ``(spec, start, stop)`` triples; block ``i`` is
    ``x[:, start:stop]``.
    """

    factors: tuple

    def __post_init__(self):
        if not self.factors:
            raise ValueError("product kernel needs at least one factor")
        object.__setattr__(self, "factors", tuple((s, int(a), int(b)) for s, a, b in self.factors))

    @property
    def is_shift_invariant(self) -> bool:
        return all(s.is_shift_invariant for s, _, _ in self.factors)

    @property
    def bandwidth(self) -> float:
        # used only to pad herding grids
        return min(s.bandwidth for s, _, _ in self.factors)

    def to_dict(self) -> dict:
        return {"product": [dict(s.to_dict(), columns=[a, b]) for s, a, b in self.factors]}


def as_points(points) -> np.ndarray:
    """Coerce a point set to a float array of shape (n, d); 1-D input is n scalars."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise ValueError(f"points must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Kernel matrix with entries ``k(A[i], B[j])``.

    Parameters
    ----------
    spec : KernelSpec
    A : array-like, shape (n, d) or (n,)
    B : array-like, shape (m, d) or (m,), optional
        Defaults to ``A``.

    Returns
    -------
    ndarray, shape (n, m)
    """
    A = as_points(A)
    B = A if B is None else as_points(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("gram needs nonempty point sets")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")

    if isinstance(spec, ProductKernel):
        out = np.ones((A.shape[0], B.shape[0]))
        for factor, start, stop in spec.factors:
            out *= gram(factor, A[:, start:stop], B[:, start:stop])
        return out
    fam = spec.family
    if fam is KernelFamily.GAUSSIAN:
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * spec.bandwidth**2))
    if fam is KernelFamily.LAPLACE:
        # scale is 2*sigma^2 (same convention as the Gaussian), not sigma
        return np.exp(-cdist(A, B, "cityblock") / (2.0 * spec.bandwidth**2))
    if fam is KernelFamily.LINEAR:
        return A @ B.T
    if fam is KernelFamily.POLYNOMIAL:
        return (A @ B.T + spec.offset) ** int(spec.degree)
    raise ValueError(f"unknown kernel family {fam}")


def eval_kernel(spec: KernelSpec, x, x_prime) -> float:
    """Evaluate ``k(x, x')`` for two single points of equal dimension."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.ndim != 1 or x_prime.ndim != 1:
        raise ValueError("eval_kernel takes two single points")
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x_prime.shape[0]}")
    return float(gram(spec, x[None, :], x_prime[None, :])[0, 0])


def median_heuristic(points) -> float:
    """Bandwidth whose square is the median pairwise squared distance.

    A zero median falls back to the smallest positive squared distance.
    """
    X = as_points(points)
    if X.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    d2 = pdist(X, "sqeuclidean")
    med = float(np.median(d2))
    if med <= 0.0:
        positive = d2[d2 > 0]
        if positive.size == 0:
            raise ValueError("median heuristic is undefined when all points are identical")
        med = float(positive.min())
    return float(np.sqrt(med))


def nystrom_factor(spec: KernelSpec, points, rank: int, rng=None, landmarks=None) -> np.ndarray:
    """Low-rank factor ``L`` (n x rank) with ``L @ L.T`` approximating the Gram matrix.

    Landmarks are the first ``rank`` entries of a random permutation, so for a
    fixed generator state the landmark sets are nested in ``rank``. Passing
    ``landmarks`` (indices) overrides the sampling.
    """
    X = as_points(points)
    n = X.shape[0]
    if not 1 <= rank <= n:
        raise ValueError(f"rank must lie in [1, {n}], got {rank}")
    if landmarks is None:
        rng = np.random.default_rng(rng)
        landmarks = rng.permutation(n)[:rank]
    landmarks = np.asarray(landmarks, dtype=int)
    if landmarks.shape != (rank,):
        raise ValueError("need exactly `rank` landmark indices")

    K_nm = gram(spec, X, X[landmarks])
    K_mm = K_nm[landmarks]
    K_mm = 0.5 * (K_mm + K_mm.T)
    evals, evecs = np.linalg.eigh(K_mm)
    keep = evals > NYSTROM_EIG_CLIP
    L = np.zeros((n, rank))
    L[:, : keep.sum()] = K_nm @ (evecs[:, keep] / np.sqrt(evals[keep]))
    return L
