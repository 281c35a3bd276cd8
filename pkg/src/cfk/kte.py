"""Kernel treatment effects.

Inverse-propensity-weighted embeddings of the potential-outcome
distributions, and squared KTE statistics built on CME estimates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .embedding import WeightedEmbedding, squared_mmd_biased
from .kernels import KernelSpec, as_points, gram

PROPENSITY_CLIP = 1e-6


class Normalization(str, enum.Enum):
    """How inverse-propensity weights are scaled within each arm.

    RAW divides by the arm size (``n = sum t_i``); SELF_NORMALIZED rescales
    the weights to sum to one; HORVITZ_THOMPSON divides by the total sample
    size ``N``, which is the form that is exactly unbiased.
    """

    RAW = "raw"
    SELF_NORMALIZED = "self_normalized"
    HORVITZ_THOMPSON = "horvitz_thompson"


@dataclass(frozen=True)
class PropensityModel:
    """Map from covariates to treatment probability, clipped to ``[clip, 1 - clip]``."""

    fn: Callable[[np.ndarray], np.ndarray]
    mode: str = "known"
    clip: float = PROPENSITY_CLIP

    @classmethod
    def constant(cls, p: float) -> "PropensityModel":
        if not 0.0 < p < 1.0:
            raise ValueError(f"constant propensity must lie in (0, 1), got {p}")
        return cls(lambda x: np.full(as_points(x).shape[0], float(p)), mode="constant")

    @classmethod
    def known(cls, fn: Callable[[np.ndarray], np.ndarray]) -> "PropensityModel":
        return cls(fn, mode="known")

    @classmethod
    def logistic(cls, coef, intercept: float) -> "PropensityModel":
        coef = np.asarray(coef, dtype=float)
        return cls(lambda x: 1.0 / (1.0 + np.exp(-(as_points(x) @ coef + intercept))), mode="known")

    def __call__(self, x) -> np.ndarray:
        e = np.asarray(self.fn(x), dtype=float).ravel()
        if np.any(~np.isfinite(e)) or np.any(e <= 0.0) or np.any(e >= 1.0):
            raise ValueError("propensity scores must lie strictly inside (0, 1)")
        return np.clip(e, self.clip, 1.0 - self.clip)


@dataclass
class ObservationalDataset:
    """Records ``(x_i, t_i, y_i)``; simulators also fill the oracle columns."""

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y0_star: Optional[np.ndarray] = None
    y1_star: Optional[np.ndarray] = None
    propensity: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = as_points(self.x)
        self.t = np.asarray(self.t).astype(int).ravel()
        self.y = np.asarray(self.y, dtype=float)
        if not np.isin(self.t, (0, 1)).all():
            raise ValueError("treatments must be binary")
        if not (self.x.shape[0] == self.t.shape[0] == self.y.shape[0]):
            raise ValueError("x, t and y must have the same number of rows")

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def treated(self) -> np.ndarray:
        return self.t == 1

    @property
    def control(self) -> np.ndarray:
        return self.t == 0


def ipw_arm_embedding(
    data: ObservationalDataset,
    e: PropensityModel,
    kernel: KernelSpec,
    arm: int,
    normalization: Normalization = Normalization.SELF_NORMALIZED,
) -> WeightedEmbedding:
    """Propensity-weighted embedding of ``Y*_arm``, supported on that arm's outcomes."""
    normalization = Normalization(normalization)
    mask = data.treated if arm == 1 else data.control
    size = int(mask.sum())
    if size == 0:
        raise ValueError(f"treatment arm {arm} is empty")
    scores = e(data.x)[mask]
    w = 1.0 / (scores if arm == 1 else 1.0 - scores)
    if normalization is Normalization.RAW:
        w = w / size
    elif normalization is Normalization.HORVITZ_THOMPSON:
        w = w / len(data)
    else:
        w = w / w.sum()
    return WeightedEmbedding(as_points(data.y)[mask], w, kernel)


def ipw_embeddings(
    data: ObservationalDataset,
    e: PropensityModel,
    kernel: KernelSpec,
    normalization: Normalization = Normalization.SELF_NORMALIZED,
) -> tuple[WeightedEmbedding, WeightedEmbedding]:
    """Propensity-weighted embeddings ``(mu_hat_Y1*, mu_hat_Y0*)``; both arms must be nonempty."""
    if not data.treated.any() or not data.control.any():
        raise ValueError("both treatment arms must be nonempty")
    return (
        ipw_arm_embedding(data, e, kernel, 1, normalization),
        ipw_arm_embedding(data, e, kernel, 0, normalization),
    )


def kte_date_squared(
    data: ObservationalDataset,
    e: PropensityModel,
    kernel: KernelSpec,
    normalization: Normalization = Normalization.SELF_NORMALIZED,
) -> float:
    """Squared distance between the two IPW potential-outcome embeddings."""
    mu1, mu0 = ipw_embeddings(data, e, kernel, normalization)
    return squared_mmd_biased(mu1, mu0)


def _kte_against_sample(cme_estimate: WeightedEmbedding, outcomes, kernel: Optional[KernelSpec]) -> float:
    if kernel is not None and kernel != cme_estimate.kernel:
        raise ValueError("outcome kernel differs from the kernel of the CME estimate")
    ell = cme_estimate.kernel
    obs = as_points(outcomes)
    if obs.shape[0] == 0:
        raise ValueError("empty outcome sample")
    n = obs.shape[0]
    beta, ys = cme_estimate.weights, cme_estimate.points
    first = gram(ell, obs).sum() / n**2
    cross = 2.0 / n * (gram(ell, obs, ys) @ beta).sum()
    last = beta @ gram(ell, ys) @ beta
    return max(float(first - cross + last), 0.0)


def kte_assignment_squared(cme_estimate: WeightedEmbedding, control_outcomes, kernel: Optional[KernelSpec] = None) -> float:
    """Squared KTE between observed control outcomes and the CME of ``Y<0|1>``."""
    return _kte_against_sample(cme_estimate, control_outcomes, kernel)


def kte_treated_squared(cme_estimate: WeightedEmbedding, treated_outcomes, kernel: Optional[KernelSpec] = None) -> float:
    """Squared KTE on the treated: observed treated outcomes against the CME of ``Y<0|1>``."""
    return _kte_against_sample(cme_estimate, treated_outcomes, kernel)
