"""Synthetic data generators: treatment scenarios, covariate mixture shift and a slate recommender."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ._rng import as_generator
from .kte import ObservationalDataset, PropensityModel
from .ope import LoggedData, SlatePolicy, TargetSample

DEFAULT_BETA = (0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_ALPHA = (0.5, 0.4, 0.3, 0.2, 0.1)
DEFAULT_NU = (
    (-5.0, 2.5, 0.0, 0.0, 2.5),
    (2.5, 2.5, 0.0, 0.0, -5.0),
    (2.5, -5.0, 0.0, 0.0, 2.5),
)


class Scenario(str, enum.Enum):
    NO_EFFECT = "I"
    MEAN_SHIFT = "II"
    HIGHER_ORDER = "III"


def _positive(name: str, value: float):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Parametric outcome model ``Y*_t = beta^T X + b t + eps`` with logistic assignment.

    ``x_variance`` is the per-coordinate variance of ``X``. With
    ``assignment="randomized"`` treatment is a fair coin independent of ``X``.
    """

    scenario: Scenario = Scenario.NO_EFFECT
    n: int = 100
    beta: tuple = DEFAULT_BETA
    alpha: tuple = DEFAULT_ALPHA
    alpha0: float = 0.05
    noise_variance: float = 0.1
    x_variance: float = 0.1
    assignment: str = "logistic"

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.assignment not in ("logistic", "randomized"):
            raise ValueError(f"assignment must be 'logistic' or 'randomized', got {self.assignment!r}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if len(self.beta) != len(self.alpha):
            raise ValueError("beta and alpha must have the same length")
        if self.n < 1:
            raise ValueError("n must be positive")
        _positive("noise_variance", self.noise_variance)
        _positive("x_variance", self.x_variance)

    @property
    def dim(self) -> int:
        return len(self.beta)

    def propensity_model(self) -> PropensityModel:
        if self.assignment == "randomized":
            return PropensityModel.constant(0.5)
        return PropensityModel.logistic(self.alpha, self.alpha0)


@dataclass(frozen=True)
class GaussianMixtureLaw:
    """1-D law ``sum_c weights[c] N(means[c], variances[c])``."""

    weights: tuple
    means: tuple
    variances: tuple

    def embedding(self, y, bandwidth: float) -> np.ndarray:
        """Gaussian-kernel mean embedding evaluated at ``y``."""
        y = np.asarray(y, dtype=float).reshape(-1, 1)
        s2 = bandwidth**2
        w, m, v = (np.asarray(a, dtype=float) for a in (self.weights, self.means, self.variances))
        return (w * np.sqrt(s2 / (s2 + v)) * np.exp(-((y - m) ** 2) / (2.0 * (s2 + v)))).sum(axis=1)

    def squared_norm(self, bandwidth: float) -> float:
        s2 = bandwidth**2
        w, m, v = (np.asarray(a, dtype=float) for a in (self.weights, self.means, self.variances))
        total = s2 + v[:, None] + v[None, :]
        gram = np.sqrt(s2 / total) * np.exp(-((m[:, None] - m[None, :]) ** 2) / (2.0 * total))
        return float(w @ gram @ w)


def potential_outcome_law(config: ScenarioConfig, treatment: int) -> GaussianMixtureLaw:
    """Exact marginal law of ``Y*_t``; used as a closed-form oracle."""
    var = float(np.sum(np.square(config.beta)) * config.x_variance + config.noise_variance)
    if treatment == 0 or config.scenario is Scenario.NO_EFFECT:
        return GaussianMixtureLaw((1.0,), (0.0,), (var,))
    if config.scenario is Scenario.MEAN_SHIFT:
        return GaussianMixtureLaw((1.0,), (2.0,), (var,))
    return GaussianMixtureLaw((0.5, 0.5), (-1.0, 1.0), (var, var))


def gen_scenario(config: ScenarioConfig, rng=None) -> ObservationalDataset:
    """Observational sample with both potential outcomes and the true propensity."""
    rng = as_generator(rng)
    n, d = config.n, config.dim
    x = rng.normal(0.0, np.sqrt(config.x_variance), size=(n, d))
    eps = rng.normal(0.0, np.sqrt(config.noise_variance), size=n)
    if config.scenario is Scenario.NO_EFFECT:
        b = np.zeros(n)
    elif config.scenario is Scenario.MEAN_SHIFT:
        b = np.full(n, 2.0)
    else:
        b = 2.0 * rng.integers(0, 2, size=n) - 1.0
    if config.assignment == "randomized":
        e = np.full(n, 0.5)
    else:
        e = 1.0 / (1.0 + np.exp(-(x @ np.asarray(config.alpha) + config.alpha0)))
    t = (rng.random(n) < e).astype(int)
    base = x @ np.asarray(config.beta) + eps
    y0, y1 = base, base + b
    y = np.where(t == 1, y1, y0)
    return ObservationalDataset(x, t, y, y0_star=y0, y1_star=y1, propensity=e)


@dataclass(frozen=True)
class MixtureShiftConfig:
    """Control covariates ``N(0, s I)``, treated covariates a Gaussian mixture with the same spread."""

    n: int = 500
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    means: tuple = DEFAULT_NU
    beta: tuple = DEFAULT_BETA
    x_variance: float = 0.1
    noise_variance: float = 0.1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        means = np.asarray(self.means, dtype=float)
        if means.shape != (w.shape[0], len(self.beta)):
            raise ValueError("need one mean of length len(beta) per mixture component")
        if self.n < 1:
            raise ValueError("n must be positive")
        _positive("x_variance", self.x_variance)
        _positive("noise_variance", self.noise_variance)

    def sample_treated_covariates(self, size: int, rng) -> np.ndarray:
        rng = as_generator(rng)
        w = np.asarray(self.weights, dtype=float)
        comp = rng.choice(w.shape[0], size=size, p=w / w.sum())
        noise = rng.normal(0.0, np.sqrt(self.x_variance), size=(size, len(self.beta)))
        return np.asarray(self.means, dtype=float)[comp] + noise

    def outcomes(self, x, rng) -> np.ndarray:
        rng = as_generator(rng)
        return x @ np.asarray(self.beta) + rng.normal(0.0, np.sqrt(self.noise_variance), size=x.shape[0])

    def sample_counterfactual(self, size: int, rng=None) -> np.ndarray:
        """Direct draws of ``Y0*`` for treated units (oracle)."""
        rng = as_generator(rng)
        return self.outcomes(self.sample_treated_covariates(size, rng), rng)


@dataclass
class MixtureShiftData:
    x_control: np.ndarray
    y_control: np.ndarray
    x_treated: np.ndarray
    y_counterfactual: np.ndarray


def gen_mixture_shift(config: MixtureShiftConfig, rng=None) -> MixtureShiftData:
    rng = as_generator(rng)
    d = len(config.beta)
    x0 = rng.normal(0.0, np.sqrt(config.x_variance), size=(config.n, d))
    y0 = config.outcomes(x0, rng)
    x1 = config.sample_treated_covariates(config.n, rng)
    y_cf = config.outcomes(x1, rng)
    return MixtureShiftData(x0, y0, x1, y_cf)


@dataclass(frozen=True)
class RecSysConfig:
    """Slate recommender with logistic clicks.

    ``policy_shift`` scales the target policy's parameters to get the logging
    policy's: 1 makes them equal, -1 makes them most different.
    """

    n_users: int = 50
    n_items: int = 20
    slate_size: int = 4
    dim: int = 10
    n: int = 1000
    item_variance: float = 1.0
    user_variance: float = 1.0
    policy_shift: float = -1.0
    click_noise: float = 0.1

    def __post_init__(self):
        if self.slate_size > self.n_items:
            raise ValueError(f"slate size {self.slate_size} exceeds item count {self.n_items}")
        for name in ("n_users", "n_items", "slate_size", "dim", "n"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not -1.0 <= self.policy_shift <= 1.0:
            raise ValueError("policy_shift must lie in [-1, 1]")
        _positive("item_variance", self.item_variance)
        _positive("user_variance", self.user_variance)
        if self.click_noise < 0:
            raise ValueError("click_noise must be nonnegative")


@dataclass
class RecSysData:
    item_features: np.ndarray
    user_features: np.ndarray
    logging_policy: SlatePolicy
    target_policy: SlatePolicy
    logged: LoggedData
    target: TargetSample
    target_rewards: np.ndarray = field(repr=False)
    target_click_prob: np.ndarray = field(repr=False)

    @property
    def true_value(self) -> float:
        """Mean counterfactual reward of the target policy over the shared users."""
        return float(self.target_rewards.mean())


def click_probability(user_features, item_features, users, slates, noise) -> np.ndarray:
    mean_item = item_features[slates].mean(axis=1)
    score = np.einsum("ij,ij->i", mean_item, user_features[users])
    return 1.0 / (1.0 + np.exp(-score + noise))


def gen_recsys(config: RecSysConfig, rng=None) -> RecSysData:
    rng = as_generator(rng)
    items = rng.normal(0.0, np.sqrt(config.item_variance), size=(config.n_items, config.dim))
    users = rng.normal(0.0, np.sqrt(config.user_variance), size=(config.n_users, config.dim))
    mask = rng.integers(0, 2, size=users.shape)
    target_params = mask * users
    target_policy = SlatePolicy(items, target_params, config.slate_size)
    logging_policy = SlatePolicy(items, config.policy_shift * target_params, config.slate_size)

    rows = rng.integers(0, config.n_users, size=config.n)
    slates = logging_policy.sample(rows, rng)
    target_slates = target_policy.sample(rows, rng)

    theta = click_probability(users, items, rows, slates, rng.normal(0.0, config.click_noise, size=config.n))
    rewards = (rng.random(config.n) < theta).astype(float)
    theta_star = click_probability(users, items, rows, target_slates, rng.normal(0.0, config.click_noise, size=config.n))
    rewards_star = (rng.random(config.n) < theta_star).astype(float)

    logged = LoggedData(rows, users[rows], slates, rewards, logging_policy.pmf(rows, slates))
    target = TargetSample(rows, users[rows], target_slates)
    return RecSysData(items, users, logging_policy, target_policy, logged, target, rewards_star, theta_star)

