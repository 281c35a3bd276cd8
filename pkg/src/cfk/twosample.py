"""Bootstrap two-sample tests for distributional treatment effects."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ._rng import as_generator, substream
from .cme import CmeModel
from .herding import CandidateSearch, herd
from .kernels import KernelFamily, KernelSpec, as_points, gram, median_heuristic
from .modelsel import select_krr_params

KernelArg = Union[KernelSpec, str]
_PERM_CHUNK = 256


class Statistic(str, enum.Enum):
    MMD_UNBIASED = "mmd_unbiased"
    MMD_BIASED = "mmd_biased"


@dataclass
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    null_samples: np.ndarray
    alpha: float
    kernel: Optional[KernelSpec] = None
    heuristic: bool = False
    herded: Optional[np.ndarray] = None

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class TestConfig:
    kernel: KernelArg = "gaussian"
    statistic: Statistic = Statistic.MMD_UNBIASED
    n_bootstrap: int = 1000
    alpha: float = 0.01

    __test__ = False


def resolve_kernel(kernel: KernelArg, pooled) -> KernelSpec:
    """Turn a family name into a concrete kernel, fixing any bandwidth on ``pooled``."""
    if isinstance(kernel, KernelSpec):
        return kernel
    family = KernelFamily(kernel)
    if family in (KernelFamily.GAUSSIAN, KernelFamily.LAPLACE):
        return KernelSpec(family, bandwidth=median_heuristic(pooled))
    if family is KernelFamily.LINEAR:
        return KernelSpec.linear()
    return KernelSpec.polynomial()


def _mmd_from_masks(K: np.ndarray, K_offdiag: np.ndarray, S: np.ndarray, statistic: Statistic) -> np.ndarray:
    # S: (B, N) 0/1 membership in the first sample
    T = 1.0 - S
    n = S[0].sum()
    m = T[0].sum()
    cross = np.einsum("bi,bi->b", S @ K, T)
    if statistic is Statistic.MMD_UNBIASED:
        aa = np.einsum("bi,bi->b", S @ K_offdiag, S) / (n * (n - 1))
        bb = np.einsum("bi,bi->b", T @ K_offdiag, T) / (m * (m - 1))
    else:
        aa = np.einsum("bi,bi->b", S @ K, S) / n**2
        bb = np.einsum("bi,bi->b", T @ K, T) / m**2
    return aa + bb - 2.0 * cross / (n * m)


def bootstrap_two_sample_test(
    sample_a,
    sample_b,
    kernel: KernelArg = "gaussian",
    statistic: Statistic = Statistic.MMD_UNBIASED,
    n_bootstrap: int = 1000,
    alpha: float = 0.01,
    rng=None,
) -> TestResult:
    """Merge-and-resplit bootstrap test of ``P_a == P_b`` with an MMD statistic.

    The kernel bandwidth (if any) is fixed on the pooled sample once and
    reused for every replicate. Replicates keep the original sample sizes.
    The p-value is ``(1 + #{null >= observed}) / (B + 1)``.
    """
    statistic = Statistic(statistic)
    a, b = as_points(sample_a), as_points(sample_b)
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise ValueError("each sample needs at least 2 points")
    if n_bootstrap < 1:
        raise ValueError("n_bootstrap must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    rng = as_generator(rng)

    pooled = np.vstack([a, b])
    spec = resolve_kernel(kernel, pooled)
    K = gram(spec, pooled)
    K_offdiag = K.copy()
    np.fill_diagonal(K_offdiag, 0.0)
    N = n + m

    observed_mask = np.zeros((1, N))
    observed_mask[0, :n] = 1.0
    observed = float(_mmd_from_masks(K, K_offdiag, observed_mask, statistic)[0])

    null = np.empty(n_bootstrap)
    for start in range(0, n_bootstrap, _PERM_CHUNK):
        stop = min(start + _PERM_CHUNK, n_bootstrap)
        perms = np.argsort(rng.random((stop - start, N)), axis=1)
        S = np.zeros((stop - start, N))
        np.put_along_axis(S, perms[:, :n], 1.0, axis=1)
        null[start:stop] = _mmd_from_masks(K, K_offdiag, S, statistic)

    p_value = (1.0 + np.count_nonzero(null >= observed)) / (n_bootstrap + 1.0)
    return TestResult(
        statistic=observed,
        p_value=float(p_value),
        reject=bool(p_value <= alpha),
        null_samples=null,
        alpha=alpha,
        kernel=spec,
    )


def run_test(config: TestConfig, sample_a, sample_b, rng=None) -> TestResult:
    return bootstrap_two_sample_test(
        sample_a, sample_b, config.kernel, config.statistic, config.n_bootstrap, config.alpha, rng
    )


@dataclass
class PowerResult:
    power: float
    standard_error: float
    rejections: np.ndarray
    p_values: np.ndarray = field(repr=False)

    @property
    def repetitions(self) -> int:
        return self.rejections.shape[0]


def power_study(
    generator: Callable[[int, np.random.Generator], tuple],
    n: int,
    repetitions: int,
    test: Union[TestConfig, Callable[..., TestResult]] = TestConfig(),
    seed: int = 0,
) -> PowerResult:
    """Fraction of independent datasets on which the test rejects.

    ``generator(n, rng)`` returns the two samples. Repetition ``r`` draws
    its data from substream ``(seed, r, 0)`` and its resampling from
    ``(seed, r, 1)``.
    """
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    rejections = np.zeros(repetitions, dtype=bool)
    p_values = np.zeros(repetitions)
    for r in range(repetitions):
        a, b = generator(n, substream(seed, r, 0))
        test_rng = substream(seed, r, 1)
        if isinstance(test, TestConfig):
            result = run_test(test, a, b, test_rng)
        else:
            result = test(a, b, test_rng)
        rejections[r] = result.reject
        p_values[r] = result.p_value
    power = float(rejections.mean())
    se = float(np.sqrt(power * (1.0 - power) / repetitions))
    return PowerResult(power, se, rejections, p_values)


@dataclass(frozen=True)
class CmeConfig:
    """How to build the CME for the assignment-effect test.

    ``None`` kernels get a median-heuristic Gaussian. ``epsilon="cv"`` selects
    the covariate bandwidth and regularization jointly by K-fold kernel ridge
    cross-validation over the two grids.
    """

    kernel_x: Optional[KernelSpec] = None
    kernel_y: Optional[KernelSpec] = None
    epsilon: Union[float, str] = "cv"
    sigma_grid: tuple = (0.01, 0.1, 1.0, 10.0)
    epsilon_grid: tuple = (0.01, 0.1, 1.0, 10.0)
    folds: int = 5
    nystrom_rank: Optional[int] = None


def fit_cme(config: CmeConfig, x_control, y_control, rng=None) -> CmeModel:
    x_control = as_points(x_control)
    y_control = as_points(y_control)
    kernel_y = config.kernel_y or KernelSpec.gaussian(median_heuristic(y_control))
    if config.epsilon == "cv":
        rng = as_generator(rng)
        sigmas = config.sigma_grid if config.kernel_x is None else (config.kernel_x.bandwidth,)
        sigma, eps, _ = select_krr_params(
            x_control, y_control[:, 0], sigmas, config.epsilon_grid, folds=config.folds,
            seed=int(rng.integers(2**31)),
        )
        kernel_x = KernelSpec.gaussian(sigma) if config.kernel_x is None else config.kernel_x
    else:
        eps = float(config.epsilon)
        kernel_x = config.kernel_x or KernelSpec.gaussian(median_heuristic(x_control))
    return CmeModel(x_control, y_control, kernel_x, kernel_y, eps, nystrom_rank=config.nystrom_rank, rng=rng)


def test_assignment_effect(
    x_control,
    y_control,
    x_treated,
    cme: CmeConfig = CmeConfig(),
    m: Optional[int] = None,
    search: Optional[CandidateSearch] = None,
    test: TestConfig = TestConfig(),
    rng=None,
) -> TestResult:
    """Heuristic test of ``P(Y0* | T=0) == P(Y0* | T=1)``.

    Herds ``m`` points (default: as many as control outcomes) from the CME
    of ``Y<0|1>`` and runs the bootstrap test of control outcomes against
    them. The herded points are not an i.i.d. sample, so the result is
    flagged as heuristic.
    """
    rng = as_generator(rng)
    y_control = as_points(y_control)
    model = fit_cme(cme, x_control, y_control, rng)
    embedding = model.estimate_counterfactual_embedding(x_treated)
    herded = herd(embedding, m or y_control.shape[0], search)
    result = run_test(test, y_control, herded, rng)
    result.heuristic = True
    result.herded = herded
    return result


test_assignment_effect.__test__ = False
