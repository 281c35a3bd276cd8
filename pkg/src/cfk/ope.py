"""Off-policy evaluation for slate recommendation.

Kernel policy evaluation (a CME over context-slate pairs) and the direct,
weighted IPS, doubly robust and pseudoinverse slate baselines.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
from sklearn.linear_model import RidgeCV
from sklearn.model_selection import KFold

from ._rng import as_generator
from .cme import CmeModel
from .embedding import WeightedEmbedding
from .kernels import KernelSpec, ProductKernel, gram, median_heuristic
from .modelsel import counterfactual_cv

#: Expectations over slates are enumerated exactly up to this many slates.
ENUMERATION_LIMIT = 10_000
SLATE_PINV_CLIP = 1e-10


class DegenerateEstimateError(ArithmeticError):
    """All importance weights are zero, so the estimate is undefined."""


class InconsistentSlateWarning(UserWarning):
    """Target marginals fall outside the range of the logging second-moment matrix."""


class SlatePolicy:
    """Plackett-Luce slate policy.

    For user ``j`` item ``l`` has score ``params[j] @ item_features[l]``; a
    slate is ``slate_size`` sequential softmax picks without replacement, so
    its probability is the product of the renormalized pick probabilities.
    """

    def __init__(self, item_features, params, slate_size: int):
        self.item_features = np.asarray(item_features, dtype=float)
        self.params = np.asarray(params, dtype=float)
        self.slate_size = int(slate_size)
        n_items = self.item_features.shape[0]
        if not 1 <= self.slate_size <= n_items:
            raise ValueError(f"slate size {slate_size} must lie in [1, {n_items}]")

    @property
    def n_items(self) -> int:
        return self.item_features.shape[0]

    @property
    def n_slates(self) -> int:
        return math.perm(self.n_items, self.slate_size)

    def scores(self, users) -> np.ndarray:
        return self.params[np.asarray(users)] @ self.item_features.T

    def sample(self, users, rng=None) -> np.ndarray:
        """One slate per user, shape ``(len(users), K)``, via Gumbel top-k."""
        rng = as_generator(rng)
        users = np.atleast_1d(users)
        perturbed = self.scores(users) + rng.gumbel(size=(users.shape[0], self.n_items))
        return np.argsort(-perturbed, axis=1, kind="stable")[:, : self.slate_size]

    def log_pmf(self, users, slates) -> np.ndarray:
        users = np.atleast_1d(users)
        slates = np.atleast_2d(slates)
        s = self.scores(users)
        s = s - s.max(axis=1, keepdims=True)
        expo = np.exp(s)
        remaining = expo.sum(axis=1)
        rows = np.arange(users.shape[0])
        out = np.zeros(users.shape[0])
        with np.errstate(divide="ignore"):  # underflowed picks have probability zero
            for k in range(self.slate_size):
                picked = expo[rows, slates[:, k]]
                out += np.log(picked) - np.log(remaining)
                remaining = remaining - picked
        return out

    def pmf(self, users, slates) -> np.ndarray:
        return np.exp(self.log_pmf(users, slates))

    def all_slates(self) -> np.ndarray:
        return np.array(list(itertools.permutations(range(self.n_items), self.slate_size)), dtype=int)


@dataclass
class LoggedData:
    """Logged interactions ``(u_i, a_i, r_i)`` with the logging propensity of each slate."""

    users: np.ndarray
    contexts: np.ndarray
    slates: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray

    def __post_init__(self):
        if np.any(self.propensities <= 0):
            raise ValueError("logged slates must have positive logging propensity")

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def subset(self, idx) -> "LoggedData":
        return LoggedData(self.users[idx], self.contexts[idx], self.slates[idx], self.rewards[idx], self.propensities[idx])


@dataclass
class TargetSample:
    """Context-slate pairs drawn from the target policy (rewards withheld)."""

    users: np.ndarray
    contexts: np.ndarray
    slates: np.ndarray

    def __len__(self) -> int:
        return self.users.shape[0]

    def subset(self, idx) -> "TargetSample":
        return TargetSample(self.users[idx], self.contexts[idx], self.slates[idx])


def slate_features(item_features, slates) -> np.ndarray:
    """Concatenate the item vectors of each slate in slot order, shape ``(n, K*d)``."""
    item_features = np.asarray(item_features)
    slates = np.atleast_2d(slates)
    return item_features[slates].reshape(slates.shape[0], -1)


def slate_indicator(slates, n_items: int) -> np.ndarray:
    """Slot-major indicator ``1_a``: entry ``k * M + m`` is 1 iff slot ``k`` holds item ``m``."""
    slates = np.atleast_2d(slates)
    n, K = slates.shape
    out = np.zeros((n, K * n_items))
    out[np.arange(n)[:, None], np.arange(K) * n_items + slates] = 1.0
    return out


def joint_features(contexts, item_features, slates) -> np.ndarray:
    return np.hstack([np.asarray(contexts, dtype=float), slate_features(item_features, slates)])


# ---------------------------------------------------------------------------
# Kernel policy evaluation


def kpe_kernel(logged: LoggedData, item_features, kernel_u=None, kernel_a=None) -> ProductKernel:
    """Product kernel on ``(u, a)``; missing factors get median-heuristic Gaussians."""
    d_u = logged.contexts.shape[1]
    feats = slate_features(item_features, logged.slates)
    kernel_u = kernel_u or KernelSpec.gaussian(median_heuristic(logged.contexts))
    kernel_a = kernel_a or KernelSpec.gaussian(median_heuristic(feats))
    return ProductKernel(((kernel_u, 0, d_u), (kernel_a, d_u, d_u + feats.shape[1])))


@dataclass
class KpeResult:
    embedding: WeightedEmbedding
    beta: np.ndarray
    estimate: Optional[float]
    epsilon: float


def kpe(
    logged: LoggedData,
    target: TargetSample,
    item_features,
    epsilon: float,
    kernel=None,
    reward_kernel: Optional[KernelSpec] = None,
    nystrom_rank: Optional[int] = None,
    rng=None,
) -> KpeResult:
    """Kernel policy evaluation.

    ``beta = (K + n eps I)^{-1} K~ 1_m`` over logged ``(u, a)`` pairs; the
    reward embedding is ``sum_i beta_i l(r_i, .)``. With a linear reward
    kernel the expected target reward is ``sum_i beta_i r_i``.
    """
    if len(logged) == 0 or len(target) == 0:
        raise ValueError("logged and target samples must be nonempty")
    reward_kernel = reward_kernel or KernelSpec.linear()
    kernel = kernel or kpe_kernel(logged, item_features)
    x = joint_features(logged.contexts, item_features, logged.slates)
    x_target = joint_features(target.contexts, item_features, target.slates)
    model = CmeModel(x, logged.rewards, kernel, reward_kernel, epsilon, nystrom_rank=nystrom_rank, rng=rng)
    beta = model.cme_weights(x_target)
    embedding = WeightedEmbedding(logged.rewards, beta, reward_kernel)
    estimate = float(beta @ logged.rewards) if reward_kernel.family.value == "linear" else None
    return KpeResult(embedding, beta, estimate, float(epsilon))


def kpe_select_epsilon(
    logged: LoggedData,
    target: TargetSample,
    item_features,
    target_policy: SlatePolicy,
    grid: Sequence[float] = tuple(10.0**p for p in range(-8, 1)),
    kernel=None,
    folds: int = 5,
    seed: int = 0,
):
    """Pick the KPE regularization by bias-corrected cross-validation.

    Validation rewards are reweighted by ``pi*(a|u) / pi0(a|u)``. The target
    sample must be row-aligned with the logged data (same users), so that a
    validation fold has matching target pairs.
    """
    if len(target) != len(logged):
        raise ValueError("bias-corrected CV needs a target sample aligned with the logged rows")
    kernel = kernel or kpe_kernel(logged, item_features)
    x = joint_features(logged.contexts, item_features, logged.slates)
    x_target = joint_features(target.contexts, item_features, target.slates)
    weights = target_policy.pmf(logged.users, logged.slates) / logged.propensities
    K_full = gram(kernel, x)
    cache: dict = {}

    def estimate(train, val, eps):
        key = tuple(val[:3]) + (len(val),)
        if key not in cache:
            evals, evecs = np.linalg.eigh(K_full[np.ix_(train, train)])
            kbar = gram(kernel, x[train], x_target[val]).mean(axis=1)
            cache[key] = (evals, evecs.T @ kbar, evecs.T @ logged.rewards[train])
        evals, proj_k, proj_r = cache[key]
        # sum_i beta_i r_i with beta = V diag(1/(lam + n eps)) V^T kbar
        return float(proj_r @ (proj_k / (evals + len(train) * eps)))

    return counterfactual_cv(estimate, logged.rewards, list(grid), weights=weights, folds=folds, seed=seed)


# ---------------------------------------------------------------------------
# Reward regression for DM / DR


class RewardRegressor(Protocol):
    def predict(self, contexts, slates) -> np.ndarray: ...


@dataclass
class RidgeRewardRegressor:
    """Ridge regression on ``[u, v_{a_1}, ..., v_{a_K}]`` with the penalty chosen by K-fold CV."""

    item_features: np.ndarray
    alphas: tuple = tuple(10.0**p for p in range(-8, 4))
    folds: int = 5
    model: Optional[RidgeCV] = field(default=None, repr=False)

    def fit(self, contexts, slates, rewards) -> "RidgeRewardRegressor":
        X = joint_features(contexts, self.item_features, slates)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        cv = KFold(n_splits=min(self.folds, X.shape[0])) if X.shape[0] >= 2 else None
        self.model = RidgeCV(alphas=self.alphas, cv=cv).fit(X, np.asarray(rewards, dtype=float))
        return self

    def predict(self, contexts, slates) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("reward regressor has not been fitted")
        return self.model.predict(joint_features(contexts, self.item_features, slates))


def fit_reward_regressor(logged: LoggedData, item_features, **config) -> RidgeRewardRegressor:
    if len(logged) == 0:
        raise ValueError("empty training set")
    return RidgeRewardRegressor(np.asarray(item_features, dtype=float), **config).fit(
        logged.contexts, logged.slates, logged.rewards
    )


# ---------------------------------------------------------------------------
# Baselines


def _policy_draws(policy: SlatePolicy, user: int, n_draws: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Slates with probabilities: exact enumeration when small, else uniform-weight MC draws."""
    if policy.n_slates <= ENUMERATION_LIMIT:
        slates = policy.all_slates()
        return slates, policy.pmf(np.full(slates.shape[0], user), slates)
    slates = policy.sample(np.full(n_draws, user), rng)
    return slates, np.full(n_draws, 1.0 / n_draws)


def _expected_prediction(logged, target_policy, regressor, n_draws, rng) -> np.ndarray:
    """``sum_a pi*(a|u_i) eta(u_i, a)`` for each logged row, computed once per user."""
    rng = as_generator(rng)
    out = np.empty(len(logged))
    for user in np.unique(logged.users):
        rows = np.flatnonzero(logged.users == user)
        slates, probs = _policy_draws(target_policy, int(user), n_draws, rng)
        ctx = np.repeat(logged.contexts[rows[:1]], slates.shape[0], axis=0)
        out[rows] = probs @ regressor.predict(ctx, slates)
    return out


def dm(logged: LoggedData, target_policy: SlatePolicy, regressor: RewardRegressor, n_draws: int = 1000, rng=None) -> float:
    """Direct method: average model-predicted reward under the target policy."""
    return float(_expected_prediction(logged, target_policy, regressor, n_draws, rng).mean())


def importance_weights(logged: LoggedData, target_policy: SlatePolicy) -> np.ndarray:
    return target_policy.pmf(logged.users, logged.slates) / logged.propensities


def wips(logged: LoggedData, target_policy: SlatePolicy = None, weights=None) -> float:
    """Self-normalized IPS: ``sum w_i r_i / sum w_i``."""
    w = importance_weights(logged, target_policy) if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise DegenerateEstimateError("all importance weights are zero")
    return float(w @ logged.rewards / total)


def dr(
    logged: LoggedData,
    target_policy: SlatePolicy,
    regressor: RewardRegressor,
    n_draws: int = 1000,
    rng=None,
) -> float:
    """Doubly robust: direct-method term plus importance-weighted residuals."""
    direct = _expected_prediction(logged, target_policy, regressor, n_draws, rng)
    w = importance_weights(logged, target_policy)
    residual = logged.rewards - regressor.predict(logged.contexts, logged.slates)
    return float(np.mean(direct + w * residual))


def _pinv_clipped(G: np.ndarray) -> np.ndarray:
    G = 0.5 * (G + G.T)
    evals, evecs = np.linalg.eigh(G)
    keep = evals > SLATE_PINV_CLIP
    return (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T


def slate_weights(
    logged: LoggedData,
    logging_policy: SlatePolicy,
    target_policy: SlatePolicy,
    n_draws: int = 1000,
    rng=None,
) -> np.ndarray:
    """Per-row pseudoinverse weights ``q_u^T Gamma_u^+ 1_a``."""
    rng = as_generator(rng)
    M = logging_policy.n_items
    ind = slate_indicator(logged.slates, M)
    out = np.empty(len(logged))
    for user in np.unique(logged.users):
        rows = np.flatnonzero(logged.users == user)
        s0, p0 = _policy_draws(logging_policy, int(user), n_draws, rng)
        s1, p1 = _policy_draws(target_policy, int(user), n_draws, rng)
        I0 = slate_indicator(s0, M)
        gamma = (I0 * p0[:, None]).T @ I0
        q = p1 @ slate_indicator(s1, M)
        pinv = _pinv_clipped(gamma)
        resid = gamma @ (pinv @ q) - q
        if np.linalg.norm(resid) > 1e-6 * max(1.0, np.linalg.norm(q)):
            warnings.warn(
                f"user {user}: target marginals are not in the range of Gamma (residual {np.linalg.norm(resid):.2e})",
                InconsistentSlateWarning,
                stacklevel=2,
            )
        out[rows] = ind[rows] @ (pinv @ q)
    return out


def slate_estimator(
    logged: LoggedData,
    logging_policy: SlatePolicy,
    target_policy: SlatePolicy,
    n_draws: int = 1000,
    rng=None,
) -> float:
    """Pseudoinverse slate estimator; unbiased when rewards are linear in ``1_a``."""
    w = slate_weights(logged, logging_policy, target_policy, n_draws, rng)
    return float(np.mean(logged.rewards * w))
