"""Cross-validation: plain kernel ridge CV and bias-corrected counterfactual CV."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ._rng import substream
from .kernels import KernelSpec, as_points, gram


def kfold_indices(n: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Fold index arrays; a deterministic function of ``(seed, n, folds)``."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < 2 * folds:
        raise ValueError(f"{n} rows cannot fill {folds} folds of at least 2 rows")
    perm = substream(seed, n, folds).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, folds)]


def _pick(params: Sequence[Any], errors: np.ndarray, tie_key: Callable[[Any], float]) -> int:
    best = errors.min()
    tied = [i for i in range(len(params)) if errors[i] == best]
    # ties go to the strongest regularization
    return max(tied, key=lambda i: tie_key(params[i]))


def select_krr_params(
    x,
    y,
    sigmas: Sequence[float],
    epsilons: Sequence[float],
    folds: int = 5,
    seed: int = 0,
) -> tuple[float, float, np.ndarray]:
    """Choose Gaussian bandwidth and ridge ``epsilon`` by K-fold CV of ``w(x)^T y``.

    Returns ``(sigma, epsilon, errors)`` where ``errors[i, j]`` is the mean
    validation MSE for ``sigmas[i]`` and ``epsilons[j]``.
    """
    x = as_points(x)
    y = np.asarray(y, dtype=float).ravel()
    splits = kfold_indices(x.shape[0], folds, seed)
    errors = np.zeros((len(sigmas), len(epsilons)))
    for i, sigma in enumerate(sigmas):
        spec = KernelSpec.gaussian(sigma)
        K = gram(spec, x)
        for val in splits:
            train = np.setdiff1d(np.arange(x.shape[0]), val)
            n_tr = train.shape[0]
            evals, evecs = np.linalg.eigh(K[np.ix_(train, train)])
            proj_y = evecs.T @ y[train]
            K_val = K[np.ix_(val, train)] @ evecs
            for j, eps in enumerate(epsilons):
                pred = K_val @ (proj_y / (evals + n_tr * eps))
                errors[i, j] += np.mean((pred - y[val]) ** 2) / len(splits)
    params = [(i, j) for i in range(len(sigmas)) for j in range(len(epsilons))]
    k = _pick(params, errors.ravel(), lambda p: epsilons[p[1]])
    i, j = params[k]
    return float(sigmas[i]), float(epsilons[j]), errors


@dataclass
class CVResult:
    best: Any
    best_error: float
    errors: np.ndarray
    params: list


def counterfactual_cv(
    estimate: Callable[[np.ndarray, np.ndarray, Any], float],
    rewards,
    grid: Sequence[Any],
    weights=None,
    folds: int = 5,
    seed: int = 0,
    loss: Callable[[float, float], float] = lambda a, b: (a - b) ** 2,
    tie_key: Optional[Callable[[Any], float]] = None,
) -> CVResult:
    """Bias-corrected K-fold model selection for counterfactual prediction.

    For each fold the validation target is the reweighted validation reward
    ``sum_j w_j r_j`` (weights renormalized within the fold). The prediction
    ``estimate(train_idx, val_idx, param)`` must use only the training rows'
    rewards and the validation rows' target covariates. Errors are averaged
    over folds and the minimizer is returned; ties go to the largest
    ``tie_key(param)`` (by default the parameter itself, i.e. larger epsilon).

    ``weights=None`` means uniform weights, which is plain K-fold CV of the
    fold-mean reward.
    """
    if len(grid) == 0:
        raise ValueError("empty parameter grid")
    r = np.asarray(rewards, dtype=float).ravel()
    w = np.ones_like(r) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != r.shape:
        raise ValueError("weights and rewards differ in length")
    splits = kfold_indices(r.shape[0], folds, seed)
    all_idx = np.arange(r.shape[0])

    errors = np.zeros(len(grid))
    for val in splits:
        train = np.setdiff1d(all_idx, val)
        wv = w[val]
        if wv.sum() <= 0:
            raise ValueError("validation fold has zero total weight")
        target = float(wv @ r[val] / wv.sum())
        for p, param in enumerate(grid):
            errors[p] += loss(float(estimate(train, val, param)), target)
    errors /= len(splits)
    best = _pick(list(grid), errors, tie_key or (lambda p: p))
    return CVResult(grid[best], float(errors[best]), errors, list(grid))
