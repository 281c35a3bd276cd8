"""Counterfactual mean embedding estimator.

The estimator is a kernel ridge regression from covariates to outcome
features. With training pairs ``(x_i, y_i)`` from the control arm and target
covariates ``x'_j``, the counterfactual embedding is ``sum_i beta_i l(y_i, .)``
with ``beta = (K + n eps I)^{-1} K~ 1_m``.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy import linalg

from .embedding import WeightedEmbedding
from .kernels import KernelSpec, as_points, gram, nystrom_factor

logger = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """A linear solve produced non-finite values or could not be factorized."""


def _cholesky_with_jitter(A: np.ndarray):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        jitter = 1e-10 * np.trace(A) / A.shape[0]
        logger.warning("Cholesky failed; retrying with jitter %.3e", jitter)
        try:
            return linalg.cho_factor(A + jitter * np.eye(A.shape[0]), lower=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalError("regularized Gram matrix is not positive definite") from exc


class CmeModel:
    """Regularized conditional embedding of outcomes given covariates.

    Parameters
    ----------
    x : array-like, shape (n, d)
        Training covariates (control arm).
    y : array-like, shape (n, p) or (n,)
        Training outcomes.
    kernel_x, kernel_y : KernelSpec
        Covariate and outcome kernels.
    epsilon : float
        Regularization; the system matrix is ``K + n * epsilon * I``.
    nystrom_rank : int, optional
        If given, ``K`` is replaced by a rank-``nystrom_rank`` Nystrom
        approximation and solves use the Woodbury identity.
    """

    def __init__(
        self,
        x,
        y,
        kernel_x: KernelSpec,
        kernel_y: KernelSpec,
        epsilon: float,
        nystrom_rank: Optional[int] = None,
        rng=None,
    ):
        self.x = as_points(x)
        self.y = as_points(y)
        if self.x.shape[0] < 1:
            raise ValueError("need at least one training pair")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("covariates and outcomes differ in length")
        if not epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.kernel_x = kernel_x
        self.kernel_y = kernel_y
        self.epsilon = float(epsilon)
        self.nystrom_rank = nystrom_rank
        n = self.n
        self._ridge = n * self.epsilon

        if nystrom_rank is None:
            K = gram(kernel_x, self.x)
            self._chol = _cholesky_with_jitter(K + self._ridge * np.eye(n))
            self._L = None
        else:
            self._L = nystrom_factor(kernel_x, self.x, nystrom_rank, rng=rng)
            r = self._L.shape[1]
            inner = self._L.T @ self._L + self._ridge * np.eye(r)
            self._chol = _cholesky_with_jitter(inner)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._L is None:
            sol = linalg.cho_solve(self._chol, rhs)
        else:
            # (L L^T + rI)^{-1} v = (v - L (L^T L + rI)^{-1} L^T v) / r
            L = self._L
            sol = (rhs - L @ linalg.cho_solve(self._chol, L.T @ rhs)) / self._ridge
        if not np.all(np.isfinite(sol)):
            raise NumericalError("non-finite weights from the ridge solve")
        return sol

    def _cross_gram(self, targets) -> np.ndarray:
        targets = as_points(targets)
        if targets.shape[1] != self.x.shape[1]:
            raise ValueError(f"target dimension {targets.shape[1]} != training dimension {self.x.shape[1]}")
        return gram(self.kernel_x, self.x, targets)

    def conditional_weights(self, x) -> np.ndarray:
        """Weights ``w(x)`` of the conditional embedding at a single covariate."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.ndim != 1:
            raise ValueError("conditional_weights takes a single covariate")
        return self._solve(self._cross_gram(x[None, :]))[:, 0]

    def weight_matrix(self, targets) -> np.ndarray:
        """Columns are the conditional weights at each target covariate."""
        return self._solve(self._cross_gram(targets))

    def cme_weights(self, targets) -> np.ndarray:
        """``beta = (K + n eps I)^{-1} K~ 1_m`` for the target covariate sample."""
        K_tilde = self._cross_gram(targets)
        if K_tilde.shape[1] < 1:
            raise ValueError("need at least one target covariate")
        return self._solve(K_tilde.mean(axis=1))

    def estimate_counterfactual_embedding(self, targets) -> WeightedEmbedding:
        return WeightedEmbedding(self.y, self.cme_weights(targets), self.kernel_y)

    def predict_mean(self, targets) -> np.ndarray:
        """Scalar ridge prediction ``w(x)^T y`` at each target (first outcome column)."""
        return self.weight_matrix(targets).T @ self.y[:, 0]


def epsilon_schedule(n: int, c: float = 1.0, exponent: float = 1.0 / 3.0) -> float:
    """Regularization ``c * n**(-exponent)``; the default sits inside the consistent regime."""
    return c * float(n) ** (-exponent)
